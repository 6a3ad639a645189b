#include <doctest.h>

#include <sstream>

#include "mimil/stream.hpp"
#include "support/gradcheck.hpp"

using namespace mimil;
using features::FeatureMode;
using namespace testsupport;

namespace {

std::unique_ptr<models::Classifier> stream_model() {
  Rng rng(11);
  auto model = models::make_classifier(models::ModelSpec::tiny(models::ModelKind::Mimil, FeatureMode::Change), rng);
  const auto bags = random_bags(rng, FeatureMode::Change, 6);
  model->standardizer().fit(bags);
  return model;
}

std::string request(const std::string& id, const Matrix& x, const std::string& mode = "change") {
  io::Json rows = io::Json::array();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    io::Json row = io::Json::array();
    for (Eigen::Index c = 0; c < x.cols(); ++c) row.push_back(x(r, c));
    rows.push_back(row);
  }
  return io::Json{{"window_id", id}, {"feature_mode", mode}, {"matrix", rows}}.dump();
}

}  // namespace

TEST_CASE("stream line matches direct inference") {
  const auto model = stream_model();
  Rng rng(3);
  const Matrix x = random_matrix(rng, 19, 8);
  bool ok = false;
  const auto rec = stream::process_line(*model, request("w1", x), &ok);
  CHECK(ok);
  CHECK(rec["window_id"] == "w1");
  const auto direct = model->infer(x);
  CHECK(rec["probability"].get<double>() == direct.probability);
  CHECK(rec["predicted_class"] == (direct.probability >= 0.5 ? "CWS" : "CWNS"));
  CHECK(rec["attention"].size() == 4);
  CHECK(rec["attention"]["HR"].size() == 19);
  CHECK(rec["latency_s"].get<double>() >= 0.0);
}

TEST_CASE("stream errors keep the window id") {
  const auto model = stream_model();
  Rng rng(4);
  bool ok = true;
  auto rec = stream::process_line(*model, request("w2", random_matrix(rng, 19, 24), "raw"), &ok);
  CHECK_FALSE(ok);
  CHECK(rec["window_id"] == "w2");
  CHECK(rec.contains("error"));
  rec = stream::process_line(*model, request("w3", random_matrix(rng, 18, 8)), &ok);
  CHECK_FALSE(ok);
  CHECK(rec["window_id"] == "w3");
  rec = stream::process_line(*model, "{not json", &ok);
  CHECK_FALSE(ok);
  CHECK(rec.contains("error"));
}

TEST_CASE("infer_stream answers every non-blank line in order") {
  const auto model = stream_model();
  Rng rng(5);
  std::stringstream in;
  in << request("a", random_matrix(rng, 19, 8)) << "\n\n";
  in << "garbage\n";
  in << request("b", random_matrix(rng, 19, 8)) << "\n";
  std::stringstream out;
  const auto stats = stream::infer_stream(*model, in, out);
  CHECK(stats.lines == 3);
  CHECK(stats.errors == 1);
  std::string line;
  std::vector<io::Json> recs;
  while (std::getline(out, line)) recs.push_back(io::Json::parse(line));
  REQUIRE(recs.size() == 3);
  CHECK(recs[0]["window_id"] == "a");
  CHECK(recs[1].contains("error"));
  CHECK(recs[2]["window_id"] == "b");
  CHECK(stats.mean_latency_s() >= 0.0);
}
