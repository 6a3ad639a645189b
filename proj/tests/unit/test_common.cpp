#include <doctest.h>

#include <atomic>
#include <set>
#include <stdexcept>

#include "mimil/common.hpp"

using namespace mimil;

TEST_CASE("fnv1a matches the reference 64-bit vectors") {
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
  CHECK(fnv1a_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("rng streams are deterministic and splits differ") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c(42);
  CHECK(c.split(1).next_u64() != c.split(2).next_u64());
  CHECK(c.split(1).next_u64() == Rng(42).split(1).next_u64());
}

TEST_CASE("rng uniform and normal moments") {
  Rng r(7);
  double su = 0, sn = 0, sn2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    CHECK_UNARY(u >= 0.0);
    CHECK_UNARY(u < 1.0);
    su += u;
    const double z = r.normal();
    sn += z;
    sn2 += z * z;
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("below covers its range and rejects zero") {
  Rng r(3);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(r.below(5));
  CHECK(seen.size() == 5);
  CHECK(*seen.rbegin() == 4);
  CHECK_THROWS_AS(r.below(0), ParameterError);
}

TEST_CASE("shuffle is a permutation") {
  Rng r(9);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  r.shuffle(v);
  std::set<int> s(v.begin(), v.end());
  CHECK(s.size() == 50);
}

TEST_CASE("parallel_for visits every index once and propagates exceptions") {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 3) throw DataError("boom");
                  }),
                  DataError);
}
