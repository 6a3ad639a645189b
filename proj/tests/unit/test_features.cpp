#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "mimil/common.hpp"
#include "mimil/features.hpp"

using namespace mimil;
using namespace mimil::features;

namespace {

constexpr double kFs = 1250.0;

// Gaussian QRS-like bump train; beats at `first + k * period` seconds.
std::vector<double> beat_train(double period_s, double seconds, double noise_sd, Rng* rng,
                               std::vector<std::size_t>* truth) {
  const auto n = static_cast<std::size_t>(seconds * kFs);
  std::vector<double> x(n, 0.0);
  for (double t = period_s / 2; t < seconds; t += period_s) {
    const auto c = static_cast<std::size_t>(t * kFs);
    if (truth) truth->push_back(c);
    for (int d = -40; d <= 40; ++d) {
      const auto i = static_cast<std::ptrdiff_t>(c) + d;
      if (i < 0 || i >= static_cast<std::ptrdiff_t>(n)) continue;
      x[static_cast<std::size_t>(i)] += std::exp(-0.5 * (d / 10.0) * (d / 10.0));
    }
  }
  if (rng) {
    for (auto& v : x) v += noise_sd * rng->normal();
  }
  return x;
}

std::vector<double> sine(double period_s, double amp, double seconds) {
  std::vector<double> x(static_cast<std::size_t>(seconds * kFs));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = amp * std::sin(2 * std::numbers::pi * double(i) / kFs / period_s);
  return x;
}

signal::Window steady_window(double hr_period_s, double eda_level) {
  signal::Window w;
  w.participant_id = "p";
  w.sample_rate_hz = kFs;
  w.ecg = beat_train(hr_period_s, 20.0, 0.0, nullptr, nullptr);
  w.eda.assign(w.ecg.size(), eda_level);
  w.rsp = sine(3.0, 1.0, 20.0);
  return w;
}

}  // namespace

TEST_CASE("r-peak detector on an impulse train") {
  std::vector<double> x(static_cast<std::size_t>(10 * kFs), 0.0);
  for (std::size_t k = 1; k * 625 < x.size(); ++k) x[k * 625] = 1.0;
  const auto det = detect_r_peaks(x, kFs);
  REQUIRE(det.peaks.size() >= 14);
  for (std::size_t p : det.peaks) {
    const double k = std::round(double(p) / 625.0);
    CHECK(std::abs(double(p) - k * 625.0) <= 5.0);
  }
}

TEST_CASE("r-peak detector on a flat signal finds nothing") {
  std::vector<double> x(static_cast<std::size_t>(5 * kFs), 0.0);
  CHECK(detect_r_peaks(x, kFs).peaks.empty());
}

TEST_CASE("r-peak detector on noisy beats at 20 dB SNR") {
  Rng rng(5);
  std::vector<std::size_t> truth;
  // Bump power over a 1 s beat is about sqrt(pi) * 10 / 1250; noise sd gives 20 dB below it.
  const double signal_power = std::sqrt(std::numbers::pi) * 10.0 / kFs;
  const double noise_sd = std::sqrt(signal_power / 100.0);
  const auto x = beat_train(1.0, 30.0, noise_sd, &rng, &truth);
  const auto det = detect_r_peaks(x, kFs);
  int hit = 0;
  for (std::size_t t : truth) {
    for (std::size_t p : det.peaks) {
      if (std::abs(double(p) - double(t)) <= 0.05 * kFs) {
        ++hit;
        break;
      }
    }
  }
  const double recall = double(hit) / double(truth.size());
  const double precision = double(hit) / double(det.peaks.size());
  CHECK(recall >= 0.95);
  CHECK(precision >= 0.95);
}

TEST_CASE("hr series holds 60/RR") {
  const std::vector<std::size_t> half = {0, 625, 1250, 1875};
  for (double v : hr_series(half, kFs, 1875)) CHECK(v == doctest::Approx(120.0));
  const std::vector<std::size_t> one = {0, 1250, 2500};
  for (double v : hr_series(one, kFs, 2500)) CHECK(v == doctest::Approx(60.0));
  const std::vector<std::size_t> step = {0, 625, 1875};
  const auto s = hr_series(step, kFs, 1875);
  CHECK(s[100] == doctest::Approx(120.0));
  CHECK(s[1000] == doctest::Approx(60.0));
  const std::vector<std::size_t> lone = {10};
  CHECK_THROWS_AS(hr_series(lone, kFs, 100), DataError);
}

TEST_CASE("respiration rate and amplitude of a sine") {
  const auto r3 = rsp_rate_amp(sine(3.0, 1.0, 30.0), kFs);
  CHECK(r3.rate[r3.rate.size() / 2] == doctest::Approx(20.0).epsilon(0.05));
  CHECK(r3.amp[r3.amp.size() / 2] == doctest::Approx(2.0).epsilon(0.05));
  const auto r4 = rsp_rate_amp(sine(4.0, 0.5, 30.0), kFs);
  CHECK(r4.rate[r4.rate.size() / 2] == doctest::Approx(15.0).epsilon(0.05));
  CHECK(r4.amp[r4.amp.size() / 2] == doctest::Approx(1.0).epsilon(0.05));
  std::vector<double> flat(static_cast<std::size_t>(10 * kFs), 0.3);
  CHECK_THROWS_AS(rsp_rate_amp(flat, kFs), DataError);
}

TEST_CASE("hld functionals") {
  const std::vector<double> a = {1, 2, 3, 4};
  const HldVector h = hld(a);
  CHECK(h.mean == doctest::Approx(2.5));
  CHECK(h.min == 1.0);
  CHECK(h.max == 4.0);
  CHECK(h.median == doctest::Approx(2.5));
  CHECK(h.var == doctest::Approx(1.25));
  CHECK(h.std == doctest::Approx(1.118033988749895));
  const std::vector<double> c = {7, 7, 7};
  const HldVector hc = hld(c);
  CHECK(hc.mean == 7.0);
  CHECK(hc.median == 7.0);
  CHECK(hc.var == 0.0);
  CHECK(hc.std == 0.0);
  const std::vector<double> one = {3};
  const HldVector h1 = hld(one);
  CHECK(h1.mean == 3.0);
  CHECK(h1.min == 3.0);
  CHECK(h1.max == 3.0);
  CHECK(h1.median == 3.0);
  CHECK(h1.var == 0.0);
  CHECK_THROWS_AS(hld(std::vector<double>{}), ParameterError);
}

TEST_CASE("hld property: min <= median, mean <= max and var = std^2") {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(1 + rng.below(50));
    for (auto& v : x) v = rng.normal() * 10;
    const HldVector h = hld(x);
    CHECK(h.min <= h.median);
    CHECK(h.median <= h.max);
    CHECK(h.min <= h.mean);
    CHECK(h.mean <= h.max);
    CHECK(h.var == doctest::Approx(h.std * h.std));
  }
}

TEST_CASE("raw feature grid shape, HR level and zero variance on steady channels") {
  const auto w = steady_window(0.5, 4.0);
  const RawFeatureMatrix raw = raw_features(w);
  CHECK(raw.grid.rows() == 19);
  CHECK(raw.grid.cols() == 24);
  const auto names = feature_names(FeatureMode::Raw);
  REQUIRE(names.size() == 24);
  for (int r = 0; r < 19; ++r) {
    CHECK(raw.grid(r, 0) == doctest::Approx(120.0).epsilon(0.01));
    CHECK(raw.grid(r, 6) == doctest::Approx(4.0));
    for (int m = 0; m < 4; ++m) {
      CHECK(raw.grid(r, m * 6 + 4) == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
      CHECK(raw.grid(r, m * 6 + 5) == doctest::Approx(0.0).scale(1.0).epsilon(1e-3));
    }
  }
}

TEST_CASE("feature modes and names") {
  CHECK(num_columns(FeatureMode::Raw) == 24);
  CHECK(num_columns(FeatureMode::Change) == 8);
  CHECK(num_columns(FeatureMode::Delta) == 24);
  CHECK(feature_names(FeatureMode::Change).size() == 8);
  CHECK(feature_names(FeatureMode::Raw)[0] == "HR_mean");
  CHECK(modality_offset(FeatureMode::Change, Modality::RSP_RATE) == 6);
  CHECK(modality_offset(FeatureMode::Raw, Modality::EDA) == 6);
  CHECK_THROWS_AS(parse_feature_mode("nope"), ParameterError);
}

TEST_CASE("change score identities") {
  const HldVector b = HldVector::from_array(std::vector<double>{1, 2, 3, 4, 5, 6});
  const ChangeScore same = change_score(b, b);
  CHECK(same.euclid == doctest::Approx(0.0));
  CHECK(same.cosine == doctest::Approx(1.0));
  const HldVector twice = HldVector::from_array(std::vector<double>{2, 4, 6, 8, 10, 12});
  const ChangeScore col = change_score(twice, b);
  CHECK(col.cosine == doctest::Approx(1.0));
  CHECK(col.euclid == doctest::Approx(std::sqrt(91.0)));
  const HldVector e1 = HldVector::from_array(std::vector<double>{1, 0, 0, 0, 0, 0});
  const HldVector e2 = HldVector::from_array(std::vector<double>{0, 1, 0, 0, 0, 0});
  const ChangeScore orth = change_score(e1, e2);
  CHECK(orth.cosine == doctest::Approx(0.0));
  CHECK(orth.euclid == doctest::Approx(std::sqrt(2.0)));
  const HldVector zero{};
  const ChangeScore deg = change_score(zero, b);
  CHECK(deg.degenerate);
  CHECK(deg.cosine == 0.0);
}

TEST_CASE("delta change score arithmetic") {
  const HldVector b = HldVector::from_array(std::vector<double>{2, 2, 2, 2, 2, 2});
  const HldVector p = HldVector::from_array(std::vector<double>{5, 5, 5, 5, 5, 5});
  for (double v : delta_change_score(p, b)) CHECK(v == 3.0);
  for (double v : delta_change_score(b, b)) CHECK(v == 0.0);
  const HldVector p1 = HldVector::from_array(std::vector<double>{3, 3, 3, 3, 3, 3});
  for (double v : delta_change_score(p1, b)) CHECK(v == 1.0);
}

TEST_CASE("change grid: self comparison and cosine scale invariance") {
  const auto w = steady_window(0.8, 3.0);
  const RawFeatureMatrix raw = raw_features(w);
  const std::vector<RawFeatureMatrix> base = {raw};
  const BaselineScore bs = baseline_score("p", base);
  const Matrix cs = featurize(raw, FeatureMode::Change, &bs);
  CHECK(cs.rows() == 19);
  CHECK(cs.cols() == 8);
  for (int r = 0; r < 19; ++r) {
    for (int m = 0; m < 4; ++m) {
      CHECK(cs(r, 2 * m) == doctest::Approx(1.0).epsilon(1e-3));
      CHECK(std::abs(cs(r, 2 * m + 1)) < 0.05 * (1.0 + bs.per_modality[m].mean));
    }
  }
  RawFeatureMatrix doubled = raw;
  doubled.grid *= 2.0;
  const Matrix cd = featurize(doubled, FeatureMode::Change, &bs);
  for (int r = 0; r < 19; ++r) {
    for (int m = 0; m < 4; ++m) CHECK(cd(r, 2 * m) == doctest::Approx(cs(r, 2 * m)).epsilon(1e-12));
  }
  const Matrix dd = featurize(raw, FeatureMode::Delta, &bs);
  CHECK(dd.cols() == 24);
  CHECK_THROWS_AS(featurize(raw, FeatureMode::Change, nullptr), DataError);
}
