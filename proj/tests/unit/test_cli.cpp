#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mimil/cli.hpp"
#include "mimil/eval.hpp"
#include "mimil/io.hpp"
#include "mimil/synth.hpp"

namespace fs = std::filesystem;
using namespace mimil;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args, const std::string& input = "") {
  args.insert(args.begin(), "mimil");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::istringstream in(input);
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), in, out, err);
  return {code, out.str(), err.str()};
}

std::string field(const std::string& text, const std::string& key) {
  const auto p = text.find(key + ": ");
  REQUIRE(p != std::string::npos);
  const auto s = p + key.size() + 2;
  auto e = text.find_first_of(" \n", s);
  return text.substr(s, e - s);
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("cli exit codes") {
  const auto d = scratch("mimil_cli_codes");
  CHECK(invoke({}).code == cli::kExitConfig);
  CHECK(invoke({"train", "--model", "nope", "--bags", "x"}).code == cli::kExitConfig);
  CHECK(invoke({"--help"}).code == cli::kExitOk);

  io::write_json(d / "bad.json", {{"n_cws", 2}});
  CHECK(invoke({"generate", "--config", (d / "bad.json").string(), "--out", (d / "g").string()}).code ==
        cli::kExitConfig);
  CHECK(invoke({"rank", "--bags", (d / "missing.jsonl").string()}).code == cli::kExitData);
  {
    std::ofstream f(d / "broken.jsonl");
    f << "{\"window_id\": \n";
  }
  CHECK(invoke({"rank", "--bags", (d / "broken.jsonl").string()}).code == cli::kExitData);
  fs::remove_all(d);
}

TEST_CASE("cli pipeline: generate, featurize, train, evaluate, explain, rank, bench, stream") {
  const auto d = scratch("mimil_cli_pipe");
  io::write_json(d / "synth.json", {{"n_cws", 7},
                                    {"n_cwns", 7},
                                    {"windows_per_participant", 2},
                                    {"baseline_s", 30.0},
                                    {"write_recordings", true}});
  auto g = invoke({"generate", "--config", (d / "synth.json").string(), "--out", (d / "data").string()});
  REQUIRE_MESSAGE(g.code == 0, g.err);
  const std::string manifest = field(g.out, "manifest");
  CHECK(field(g.out, "dataset_hash").size() == 16);
  auto g2 = invoke({"generate", "--config", (d / "synth.json").string(), "--out", (d / "data2").string()});
  CHECK(field(g2.out, "dataset_hash") == field(g.out, "dataset_hash"));

  auto f = invoke({"featurize", "--manifest", manifest, "--feature-mode", "change", "--out",
                   (d / "bags_change.jsonl").string()});
  REQUIRE_MESSAGE(f.code == 0, f.err);
  CHECK(f.out.find("28 bags") != std::string::npos);

  io::write_json(d / "exp.json", {{"train", {{"epochs", 3}, {"patience", 3}, {"seeds", {0}}}},
                                  {"model_overrides", {{"embed_hidden", 8}, {"embed_dim", 8}, {"attn_dim", 8},
                                                       {"cls_hidden1", 8}, {"cls_hidden2", 4}}}});
  auto t = invoke({"train", "--config", (d / "exp.json").string(), "--bags", (d / "bags_change.jsonl").string(),
                   "--out", (d / "runs").string()});
  REQUIRE_MESSAGE(t.code == 0, t.err);
  const std::string run = field(t.out, "run");
  CHECK(fs::path(run).filename().string().rfind("run-", 0) == 0);
  CHECK(fs::exists(fs::path(run) / "seed_0.miml"));

  auto e = invoke({"evaluate", "--run", run});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  CHECK(io::read_json(fs::path(run) / "evaluation.json")["reproduced"] == true);

  auto x = invoke({"explain", "--run", run, "--format", "json", "--limit", "2", "--shap-mode", "sampled",
                   "--coalitions", "256", "--out", (d / "expl").string()});
  REQUIRE_MESSAGE(x.code == 0, x.err);
  bool found = false;
  for (const auto& entry : fs::directory_iterator(d / "expl")) {
    if (entry.path().filename().string().rfind("explain-", 0) == 0) {
      found = true;
      CHECK(fs::exists(entry.path() / "explanations.jsonl"));
      CHECK(fs::exists(entry.path() / "global.json"));
    }
  }
  CHECK(found);

  auto r = invoke({"rank", "--bags", (d / "data" / "bags_raw.jsonl").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.rfind("Rank  Feature name      Coefficient", 0) == 0);
  CHECK(std::count(r.out.begin(), r.out.end(), '\n') == 25);

  auto b = invoke({"bench", "--run", run, "--iters", "5"});
  REQUIRE_MESSAGE(b.code == 0, b.err);
  CHECK(io::Json::parse(b.out)["model_only"]["n_iters"] == 5);

  std::ostringstream req;
  req << R"({"window_id":"q","feature_mode":"change","matrix":[)";
  for (int i = 0; i < 19; ++i) req << (i ? "," : "") << "[0,0,0,0,0,0,0,0]";
  req << "]}\n";
  auto s = invoke({"stream", "--run", run}, req.str());
  REQUIRE_MESSAGE(s.code == 0, s.err);
  const auto rec = io::Json::parse(s.out);
  CHECK(rec["window_id"] == "q");
  CHECK(rec.contains("probability"));
  fs::remove_all(d);
}

TEST_CASE("shipped configs parse and round-trip") {
  int n = 0;
  for (const auto& entry : fs::directory_iterator(MIMIL_CONFIG_DIR)) {
    const auto j = io::read_json(entry.path());
    const auto name = entry.path().filename().string();
    INFO(name);
    if (name.rfind("synth_", 0) == 0) {
      CHECK(synth::SynthConfig::from_json(j).to_json() == j);
    } else {
      CHECK(eval::ExperimentConfig::from_json(j).to_json() == j);
    }
    ++n;
  }
  CHECK(n >= 2);
  CHECK(io::read_json(fs::path(MIMIL_CONFIG_DIR) / "synth_default.json") == synth::SynthConfig{}.to_json());
}
