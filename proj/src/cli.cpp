#include "mimil/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mimil/bag.hpp"
#include "mimil/common.hpp"
#include "mimil/eval.hpp"
#include "mimil/explain.hpp"
#include "mimil/features.hpp"
#include "mimil/io.hpp"
#include "mimil/models.hpp"
#include "mimil/signal.hpp"
#include "mimil/stream.hpp"
#include "mimil/synth.hpp"

namespace mimil::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string feature_mode;
  std::string model;
  std::string out;
  std::string stream_tcp;

  std::string manifest;
  std::string bags;
  std::string run;
  std::string model_file;
  std::string window;
  std::string shap_mode = "sampled";
  std::string explain_mode = "grouped";
  std::string format = "csv";
  int coalitions = 4096;
  int limit = 0;
  int iters = 1000;
  double lambda = 1.0;
};

io::Json bags_input(const fs::path& p) {
  return {{"path", fs::absolute(p).lexically_normal().string()}, {"hash", io::file_hash(p)}};
}

std::vector<Bag> load_bag_file(const fs::path& p) {
  auto bags = load_bags(p);
  if (bags.empty()) throw DataError(p.string() + ": no bags");
  return bags;
}

fs::path bags_from_report(const fs::path& run_dir, const std::string& override_path) {
  if (!override_path.empty()) return override_path;
  const io::Json rep = io::read_json(run_dir / "report.json");
  if (!rep.contains("inputs") || !rep["inputs"].contains("bags")) {
    throw ConfigError(run_dir.string() + ": report has no recorded bag input; pass --bags");
  }
  return rep["inputs"]["bags"]["path"].get<std::string>();
}

fs::path weights_path(const Options& o) {
  if (!o.model_file.empty()) return o.model_file;
  if (o.run.empty()) throw ConfigError("need --model-file or --run");
  std::uint64_t seed = 0;
  if (o.seed) {
    seed = *o.seed;
  } else {
    const auto cfg = eval::ExperimentConfig::from_json(io::read_json(fs::path(o.run) / "config.json"));
    if (!cfg.train.seeds.empty()) seed = cfg.train.seeds.front();
  }
  return fs::path(o.run) / ("seed_" + std::to_string(seed) + ".miml");
}

int cmd_generate(const Options& o, std::ostream& out) {
  synth::SynthConfig cfg;
  if (!o.config.empty()) cfg = synth::SynthConfig::from_json(io::read_json(o.config));
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  const fs::path dir = o.out.empty() ? fs::path("synth-" + eval::config_hash(cfg.to_json())) : fs::path(o.out);
  synth::generate_dataset(cfg, dir);
  out << "manifest: " << (dir / "manifest.json").string() << "\n";
  out << "dataset_hash: " << io::file_hash(dir / "bags_raw.jsonl") << "\n";
  return kExitOk;
}

int cmd_featurize(const Options& o, std::ostream& out) {
  if (o.manifest.empty()) throw ConfigError("featurize: --manifest is required");
  const auto mode = features::parse_feature_mode(o.feature_mode.empty() ? "change" : o.feature_mode);
  std::vector<WindowFeatures> windows;
  for (const auto& e : signal::load_manifest(o.manifest)) {
    const auto rec = signal::load_recording(e.csv, e.meta);
    auto w = extract_window_features(rec, {});
    for (auto& x : w) windows.push_back(std::move(x));
  }
  const auto bags = make_bags(windows, mode);
  const fs::path dst = o.out.empty() ? fs::path("bags_" + std::string(features::to_string(mode)) + ".jsonl")
                                     : fs::path(o.out);
  save_bags(bags, dst);
  out << "bags: " << dst.string() << " (" << bags.size() << " bags, "
      << features::num_columns(mode) << " columns)\n";
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out) {
  if (o.bags.empty()) throw ConfigError("train: --bags is required");
  eval::ExperimentConfig cfg;
  if (!o.config.empty()) cfg = eval::ExperimentConfig::from_json(io::read_json(o.config));
  if (!o.model.empty()) cfg.model = models::parse_model_kind(o.model);
  if (o.seed) cfg.train.seeds = {*o.seed};
  const auto bags = load_bag_file(o.bags);
  cfg.train.mode = o.feature_mode.empty() ? bags.front().mode : features::parse_feature_mode(o.feature_mode);
  cfg.train.validate();
  const fs::path root = o.out.empty() ? fs::path("runs") : fs::path(o.out);
  const io::Json inputs = {{"bags", bags_input(o.bags)}};
  const auto rep = eval::run_experiment(bags, cfg, root, inputs);
  out << "run: " << rep.run_dir.string() << "\n";
  for (const auto& s : rep.per_seed) {
    out << "seed " << s.seed << ": f1 " << s.metrics.f1 << " accuracy " << s.metrics.accuracy << "\n";
  }
  out << "mean: " << rep.mean.to_json().dump() << "\n";
  return kExitOk;
}

int cmd_evaluate(const Options& o, std::ostream& out) {
  if (o.run.empty()) throw ConfigError("evaluate: --run is required");
  const fs::path run_dir = o.run;
  const fs::path bag_path = bags_from_report(run_dir, o.bags);
  const auto bags = load_bag_file(bag_path);
  const auto metrics = eval::evaluate_run(run_dir, bags);
  const io::Json rep = io::read_json(run_dir / "report.json");
  io::Json result = {{"run", run_dir.string()}, {"inputs", {{"bags", bags_input(bag_path)}}}};
  bool same = rep.contains("per_seed") && rep["per_seed"].size() == metrics.size();
  io::Json per = io::Json::array();
  for (std::size_t i = 0; i < metrics.size(); ++i) {
    const io::Json m = metrics[i].to_json();
    per.push_back(m);
    if (same && rep["per_seed"][i]["metrics"] != m) same = false;
  }
  result["per_seed"] = per;
  result["reproduced"] = same;
  io::write_json(run_dir / "evaluation.json", result);
  out << result.dump(2) << "\n";
  return kExitOk;
}

int cmd_explain(const Options& o, std::ostream& out) {
  const fs::path weights = weights_path(o);
  const auto model = models::load_model(weights);
  fs::path bag_path = o.bags;
  std::vector<Bag> bags;
  if (bag_path.empty()) {
    if (o.run.empty()) throw ConfigError("explain: need --bags or --run");
    bag_path = bags_from_report(o.run, "");
  }
  bags = load_bag_file(bag_path);
  if (!o.run.empty() && o.window.empty()) {
    const auto split = eval::SplitSpec::from_json(io::read_json(fs::path(o.run) / "split.json"));
    bags = eval::apply_split(split, bags).test;
  }
  if (!o.window.empty()) {
    std::vector<Bag> keep;
    for (const Bag& b : bags) {
      if (b.window_id == o.window) keep.push_back(b);
    }
    if (keep.empty()) throw DataError("explain: no bag with window_id " + o.window);
    bags = std::move(keep);
  }
  if (o.limit > 0 && bags.size() > static_cast<std::size_t>(o.limit)) bags.resize(static_cast<std::size_t>(o.limit));

  const auto grouping = explain::parse_grouping(o.explain_mode);
  const auto format = explain::parse_heatmap_format(o.format);
  explain::ShapOptions opts;
  opts.mode = explain::parse_shap_mode(o.shap_mode);
  opts.n_coalitions = o.coalitions;
  if (o.seed) opts.seed = *o.seed;

  const io::Json cfg = {{"command", "explain"},
                        {"weights", fs::absolute(weights).lexically_normal().string()},
                        {"mode", o.explain_mode},
                        {"shap_mode", o.shap_mode},
                        {"coalitions", o.coalitions},
                        {"seed", opts.seed},
                        {"window", o.window},
                        {"limit", o.limit},
                        {"format", o.format}};
  const fs::path base = o.out.empty() ? (o.run.empty() ? fs::path(".") : fs::path(o.run)) : fs::path(o.out);
  const fs::path dir = base / ("explain-" + eval::config_hash(cfg));
  fs::create_directories(dir);
  io::write_json(dir / "config.json", cfg);

  const auto names = features::feature_names(model->spec().mode);
  const RowVector background = model->standardizer().mean;
  const explain::GridPredict predict = [&](const Matrix& x) { return model->predict(x); };
  std::vector<explain::ShapExplanation> expls;
  std::string lines;
  for (const Bag& b : bags) {
    auto e = explain::explain_grid(predict, b.features, background, grouping, opts, names);
    e.window_id = b.window_id;
    e.participant_id = b.participant_id;
    e.true_label = b.label;
    lines += e.to_json().dump() + "\n";
    const std::string ext = o.format == "json" ? ".json" : (o.format == "pgm" ? ".pgm" : ".csv");
    explain::export_heatmap(e.phi, dir / ("phi_" + b.window_id + ext), format, e.feature_names);
    expls.push_back(std::move(e));
  }
  io::write_text(dir / "explanations.jsonl", lines);
  io::Json global = io::Json::object();
  for (auto cls : {signal::Group::CWS, signal::Group::CWNS}) {
    const std::string tag(signal::to_string(cls));
    try {
      const auto g = explain::global_importance(expls, cls);
      global[tag] = g.to_json();
      explain::export_heatmap(g.grid, dir / ("global_" + tag + (o.format == "json" ? ".json" : (o.format == "pgm" ? ".pgm" : ".csv"))),
                              format, expls.front().feature_names);
    } catch (const DataError& e) {
      global[tag] = {{"error", e.what()}};
    }
  }
  io::write_json(dir / "global.json", global);
  io::write_json(dir / "report.json", {{"config", cfg},
                                       {"inputs", {{"bags", bags_input(bag_path)}, {"weights", io::file_hash(weights)}}},
                                       {"n_windows", expls.size()}});
  out << "explain: " << dir.string() << " (" << expls.size() << " windows, grid "
      << (expls.empty() ? 0 : expls.front().phi.rows()) << "x" << (expls.empty() ? 0 : expls.front().phi.cols())
      << ")\n";
  return kExitOk;
}

int cmd_rank(const Options& o, std::ostream& out) {
  if (o.bags.empty()) throw ConfigError("rank: --bags is required");
  const auto bags = load_bag_file(o.bags);
  const auto mode = bags.front().mode;
  const int d = features::num_columns(mode);
  Matrix x(static_cast<Eigen::Index>(bags.size()) * features::kNumSegments, d);
  std::vector<int> y;
  Eigen::Index r = 0;
  for (const Bag& b : bags) {
    if (b.mode != mode) throw DataError("rank: mixed feature modes in " + o.bags);
    x.middleRows(r, features::kNumSegments) = b.features;
    r += features::kNumSegments;
    y.insert(y.end(), features::kNumSegments, b.label);
  }
  models::Standardizer z;
  z.fit(bags);
  const Matrix xs = z.apply(x);
  const auto ranked = models::ridge_rank(xs, y, o.lambda);
  const auto names = features::feature_names(mode);
  io::Json rows = io::Json::array();
  out << "Rank  Feature name      Coefficient\n";
  char buf[128];
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%4zu  %-16s  %+.6f\n", i + 1, names[static_cast<std::size_t>(ranked[i].index)].c_str(),
                  ranked[i].coefficient);
    out << buf;
    rows.push_back({{"rank", i + 1}, {"feature", names[static_cast<std::size_t>(ranked[i].index)]},
                    {"coefficient", ranked[i].coefficient}});
  }
  if (!o.out.empty()) {
    const io::Json cfg = {{"command", "rank"}, {"lambda", o.lambda}};
    const fs::path dir = fs::path(o.out) / ("rank-" + eval::config_hash(cfg));
    io::write_json(dir / "config.json", cfg);
    io::write_json(dir / "report.json", {{"inputs", {{"bags", bags_input(o.bags)}}}, {"ranking", rows}});
  }
  return kExitOk;
}

// A single synthetic participant supplies the window (and baseline) timed by
// the with-features measurement.
signal::Window bench_window(features::BaselineScore* baseline) {
  synth::SynthConfig cfg;
  cfg.windows_per_participant = 2;
  cfg.baseline_s = 40.0;
  Rng rng(7);
  const auto pd = synth::generate_participant(signal::Group::CWS, "bench", cfg, rng);
  const auto base = signal::preprocess(synth::render(pd.baseline, cfg.noise_sd));
  std::vector<features::RawFeatureMatrix> rows;
  for (const auto& w : signal::extract_windows(base)) rows.push_back(features::raw_features(w));
  *baseline = features::baseline_score("bench", rows);
  const auto task = signal::preprocess(synth::render(pd.task, cfg.noise_sd));
  return signal::extract_windows(task).front();
}

int cmd_bench(const Options& o, std::ostream& out) {
  const fs::path weights = weights_path(o);
  const auto model = models::load_model(weights);
  Eigen::setNbThreads(1);
  features::BaselineScore baseline;
  const auto window = bench_window(&baseline);
  const auto rep = eval::bench_model(*model, window, &baseline, o.iters);
  io::Json j = rep.to_json();
  j["model"] = std::string(models::to_string(model->kind()));
  j["feature_mode"] = std::string(features::to_string(model->spec().mode));
  if (!o.out.empty()) {
    const io::Json cfg = {{"command", "bench"}, {"weights", io::file_hash(weights)}, {"iters", o.iters}};
    const fs::path dir = fs::path(o.out) / ("bench-" + eval::config_hash(cfg));
    io::write_json(dir / "config.json", cfg);
    io::write_json(dir / "report.json", j);
  }
  out << j.dump(2) << "\n";
  return kExitOk;
}

int cmd_stream(const Options& o, std::istream& in, std::ostream& out, std::ostream& err) {
  const auto model = models::load_model(weights_path(o));
  Eigen::setNbThreads(1);
  if (!o.stream_tcp.empty()) {
    err << "listening on " << o.stream_tcp << "\n";
    stream::serve_tcp(*model, o.stream_tcp);
    return kExitOk;
  }
  const auto stats = stream::infer_stream(*model, in, out);
  err << "lines " << stats.lines << " errors " << stats.errors << " mean_latency_s " << stats.mean_latency_s()
      << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
  CLI::App app{"mimil: multimodal MIL toolkit for physiological windows"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", o.config, "JSON config file");
    c->add_option("--seed", seed, "seed override");
    c->add_option("--out", o.out, "output path");
  };
  auto add_mode = [&](CLI::App* c) {
    c->add_option("--feature-mode", o.feature_mode, "raw|change|delta")
        ->check(CLI::IsMember({"raw", "change", "delta"}));
  };
  auto add_model_src = [&](CLI::App* c) {
    c->add_option("--run", o.run, "run directory");
    c->add_option("--model-file", o.model_file, "weights file (.miml)");
  };

  auto* gen = app.add_subcommand("generate", "generate a synthetic dataset");
  add_common(gen);
  auto* feat = app.add_subcommand("featurize", "turn recordings into bags");
  add_common(feat);
  add_mode(feat);
  feat->add_option("--manifest", o.manifest, "recording manifest")->required();
  auto* train = app.add_subcommand("train", "train a model over the configured seeds");
  add_common(train);
  add_mode(train);
  train->add_option("--model", o.model, "mimil|attnmil|instmax|dnn")
      ->check(CLI::IsMember({"mimil", "attnmil", "instmax", "dnn"}));
  train->add_option("--bags", o.bags, "bag file (jsonl)")->required();
  auto* evalc = app.add_subcommand("evaluate", "re-evaluate a run directory");
  add_common(evalc);
  evalc->add_option("--run", o.run, "run directory")->required();
  evalc->add_option("--bags", o.bags, "bag file (defaults to the run's recorded input)");
  auto* expl = app.add_subcommand("explain", "KernelSHAP heatmaps");
  add_common(expl);
  add_model_src(expl);
  expl->add_option("--bags", o.bags, "bag file");
  expl->add_option("--mode", o.explain_mode, "full|grouped")->check(CLI::IsMember({"full", "grouped"}));
  expl->add_option("--shap-mode", o.shap_mode, "exact|sampled")->check(CLI::IsMember({"exact", "sampled"}));
  expl->add_option("--coalitions", o.coalitions, "coalition budget (sampled mode)");
  expl->add_option("--format", o.format, "csv|pgm|json")->check(CLI::IsMember({"csv", "pgm", "json"}));
  expl->add_option("--window", o.window, "explain one window id");
  expl->add_option("--limit", o.limit, "explain at most N windows");
  auto* rank = app.add_subcommand("rank", "ridge ranking of instance features");
  add_common(rank);
  rank->add_option("--bags", o.bags, "bag file")->required();
  rank->add_option("--lambda", o.lambda, "ridge penalty");
  auto* bench = app.add_subcommand("bench", "single-window inference latency");
  add_common(bench);
  add_model_src(bench);
  bench->add_option("--iters", o.iters, "measured iterations");
  auto* strm = app.add_subcommand("stream", "line-delimited JSON inference");
  add_common(strm);
  add_model_src(strm);
  strm->add_option("--stream-tcp", o.stream_tcp, "listen on host:port instead of stdin/stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  for (auto* c : app.get_subcommands()) {
    if (c->count("--seed") > 0) o.seed = seed;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    if (name == "generate") return cmd_generate(o, out);
    if (name == "featurize") return cmd_featurize(o, out);
    if (name == "train") return cmd_train(o, out);
    if (name == "evaluate") return cmd_evaluate(o, out);
    if (name == "explain") return cmd_explain(o, out);
    if (name == "rank") return cmd_rank(o, out);
    if (name == "bench") return cmd_bench(o, out);
    return cmd_stream(o, in, out, err);
  } catch (const ConfigError& e) {
    err << name << ": config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ParameterError& e) {
    err << name << ": invalid parameter: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << name << ": numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& e) {
    err << name << ": data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    err << name << ": " << e.what() << "\n";
    return kExitData;
  } catch (const io::Json::exception& e) {
    err << name << ": data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace mimil::cli
