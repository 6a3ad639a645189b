#include "mimil/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <set>

namespace mimil::eval {

namespace fs = std::filesystem;
using models::ModelKind;

std::vector<Participant> participants_of(std::span<const Bag> bags) {
  std::map<std::string, std::pair<int, int>> counts;  // id -> (n, n_pos)
  std::vector<std::string> order;
  for (const Bag& b : bags) {
    auto [it, inserted] = counts.try_emplace(b.participant_id, 0, 0);
    if (inserted) order.push_back(b.participant_id);
    it->second.first += 1;
    it->second.second += b.label;
  }
  std::vector<Participant> out;
  for (const auto& id : order) {
    const auto [n, pos] = counts[id];
    out.push_back({id, 2 * pos >= n ? signal::Group::CWS : signal::Group::CWNS});
  }
  return out;
}

io::Json SplitSpec::to_json() const {
  return {{"train", train}, {"val", val}, {"test", test}, {"seed", seed}};
}

SplitSpec SplitSpec::from_json(const io::Json& j) {
  SplitSpec s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.val = j.at("val").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

SplitSpec person_disjoint_split(std::span<const Participant> participants, std::uint64_t seed,
                                int test_per_class, int val_per_class) {
  if (test_per_class < 1 || val_per_class < 1) {
    throw ParameterError("split: per-class test/val counts must be >= 1");
  }
  std::vector<std::string> cws, cwns;
  std::set<std::string> seen;
  for (const auto& p : participants) {
    if (!seen.insert(p.id).second) throw DataError("split: duplicate participant " + p.id);
    (p.group == signal::Group::CWS ? cws : cwns).push_back(p.id);
  }
  const auto need = static_cast<std::size_t>(test_per_class + val_per_class + 1);
  for (const auto& [name, ids] : {std::pair{"CWS", &cws}, std::pair{"CWNS", &cwns}}) {
    if (ids->size() < need) {
      throw DataError(std::string("split: ") + name + " has " + std::to_string(ids->size()) +
                      " participants, needs at least " + std::to_string(need) + " (short by " +
                      std::to_string(need - ids->size()) + ")");
    }
  }
  std::sort(cws.begin(), cws.end());
  std::sort(cwns.begin(), cwns.end());
  Rng rng(seed);
  rng.shuffle(cws);
  rng.shuffle(cwns);

  SplitSpec s;
  s.seed = seed;
  for (const auto* ids : {&cws, &cwns}) {
    const auto t = static_cast<std::size_t>(test_per_class);
    const auto v = static_cast<std::size_t>(val_per_class);
    s.test.insert(s.test.end(), ids->begin(), ids->begin() + static_cast<std::ptrdiff_t>(t));
    s.val.insert(s.val.end(), ids->begin() + static_cast<std::ptrdiff_t>(t),
                 ids->begin() + static_cast<std::ptrdiff_t>(t + v));
    s.train.insert(s.train.end(), ids->begin() + static_cast<std::ptrdiff_t>(t + v), ids->end());
  }
  return s;
}

void check_disjoint(const SplitSpec& split, std::span<const Bag> bags) {
  std::map<std::string, std::string> where;
  for (const auto& [name, ids] : {std::pair{"train", &split.train}, std::pair{"val", &split.val},
                                  std::pair{"test", &split.test}}) {
    for (const auto& id : *ids) {
      auto [it, ok] = where.emplace(id, name);
      if (!ok) throw DataError("split: participant " + id + " is in both " + it->second + " and " + name);
    }
  }
  for (const Bag& b : bags) {
    if (!where.count(b.participant_id)) {
      throw DataError("split: bag " + b.window_id + " belongs to unassigned participant " + b.participant_id);
    }
  }
}

SplitBags apply_split(const SplitSpec& split, std::span<const Bag> bags) {
  check_disjoint(split, bags);
  const std::set<std::string> tr(split.train.begin(), split.train.end());
  const std::set<std::string> va(split.val.begin(), split.val.end());
  SplitBags out;
  for (const Bag& b : bags) {
    if (tr.count(b.participant_id)) out.train.push_back(b);
    else if (va.count(b.participant_id)) out.val.push_back(b);
    else out.test.push_back(b);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

io::Json MetricsReport::to_json() const {
  return {{"accuracy", accuracy}, {"f1", f1}, {"precision", precision}, {"recall", recall},
          {"specificity", specificity}, {"tp", tp}, {"fp", fp}, {"tn", tn}, {"fn", fn},
          {"undefined", undefined}};
}

MetricsReport MetricsReport::from_json(const io::Json& j) {
  MetricsReport m;
  m.accuracy = j.at("accuracy").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.specificity = j.at("specificity").get<double>();
  m.tp = j.at("tp").get<long>();
  m.fp = j.at("fp").get<long>();
  m.tn = j.at("tn").get<long>();
  m.fn = j.at("fn").get<long>();
  m.undefined = j.value("undefined", std::vector<std::string>{});
  return m;
}

MetricsReport metrics_from_counts(long tp, long fp, long tn, long fn) {
  MetricsReport m;
  m.tp = tp;
  m.fp = fp;
  m.tn = tn;
  m.fn = fn;
  const auto ratio = [&m](const char* name, double num, double den) {
    if (den == 0.0) {
      m.undefined.emplace_back(name);
      return 0.0;
    }
    return num / den;
  };
  const double total = static_cast<double>(tp + fp + tn + fn);
  m.accuracy = ratio("accuracy", static_cast<double>(tp + tn), total);
  m.precision = ratio("precision", static_cast<double>(tp), static_cast<double>(tp + fp));
  m.recall = ratio("recall", static_cast<double>(tp), static_cast<double>(tp + fn));
  m.specificity = ratio("specificity", static_cast<double>(tn), static_cast<double>(tn + fp));
  m.f1 = ratio("f1", 2.0 * m.precision * m.recall, m.precision + m.recall);
  return m;
}

MetricsReport compute_metrics(std::span<const double> probabilities, std::span<const int> labels,
                              double threshold) {
  if (probabilities.empty()) throw ParameterError("compute_metrics: empty input");
  if (probabilities.size() != labels.size()) {
    throw ParameterError("compute_metrics: " + std::to_string(probabilities.size()) +
                         " predictions vs " + std::to_string(labels.size()) + " labels");
  }
  long tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred = probabilities[i] >= threshold;
    if (labels[i] == 1) (pred ? tp : fn) += 1;
    else (pred ? fp : tn) += 1;
  }
  return metrics_from_counts(tp, fp, tn, fn);
}

// ---------------------------------------------------------------------------
// Experiments

models::ModelSpec ExperimentConfig::model_spec() const {
  io::Json j = model_overrides;
  j["kind"] = std::string(models::to_string(model));
  j["feature_mode"] = std::string(features::to_string(train.mode));
  if (!j.contains("dropout")) j["dropout"] = train.dropout;
  return models::ModelSpec::from_json(j);
}

io::Json ExperimentConfig::to_json() const {
  return {{"model", std::string(models::to_string(model))},
          {"train", train.to_json()},
          {"model_overrides", model_overrides},
          {"split_seed", split_seed},
          {"test_per_class", test_per_class},
          {"val_per_class", val_per_class},
          {"shuffle_labels", shuffle_labels}};
}

ExperimentConfig ExperimentConfig::from_json(const io::Json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c;
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "model") c.model = models::parse_model_kind(val.get<std::string>());
      else if (key == "train") c.train = models::TrainConfig::from_json(val);
      else if (key == "model_overrides") c.model_overrides = val;
      else if (key == "split_seed") c.split_seed = val.get<std::uint64_t>();
      else if (key == "test_per_class") c.test_per_class = val.get<int>();
      else if (key == "val_per_class") c.val_per_class = val.get<int>();
      else if (key == "shuffle_labels") c.shuffle_labels = val.get<bool>();
      else throw ConfigError("experiment config: unknown key '" + key + "'");
    } catch (const io::Json::exception& e) {
      throw ConfigError("experiment config key '" + key + "': " + e.what());
    } catch (const ParameterError& e) {
      throw ConfigError("experiment config key '" + key + "': " + e.what());
    }
  }
  c.model_spec();  // surfaces bad overrides early
  return c;
}

io::Json ExperimentReport::to_json() const {
  io::Json seeds = io::Json::array();
  for (const auto& s : per_seed) {
    seeds.push_back({{"seed", s.seed},
                     {"metrics", s.metrics.to_json()},
                     {"best_epoch", s.training.best_epoch},
                     {"best_val_f1", s.training.best_val_f1},
                     {"epochs_run", s.training.history.size()},
                     {"weights", s.weights.filename().string()}});
  }
  return {{"model", std::string(models::to_string(config.model))},
          {"feature_mode", std::string(features::to_string(config.train.mode))},
          {"config", config.to_json()},
          {"split", split.to_json()},
          {"per_seed", seeds},
          {"mean", mean.to_json()}};
}

std::string config_hash(const io::Json& config) { return fnv1a_hex(config.dump()); }

namespace {

std::vector<Bag> shuffled_labels(std::span<const Bag> bags, std::uint64_t seed) {
  std::vector<int> labels;
  for (const Bag& b : bags) labels.push_back(b.label);
  Rng rng = Rng(seed).split(0x5eed);
  rng.shuffle(labels);
  std::vector<Bag> out(bags.begin(), bags.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i].label = labels[i];
  return out;
}

MetricsReport average(const std::vector<SeedResult>& runs) {
  MetricsReport m;
  const double k = static_cast<double>(runs.size());
  for (const auto& r : runs) {
    m.accuracy += r.metrics.accuracy / k;
    m.f1 += r.metrics.f1 / k;
    m.precision += r.metrics.precision / k;
    m.recall += r.metrics.recall / k;
    m.specificity += r.metrics.specificity / k;
    m.tp += r.metrics.tp;
    m.fp += r.metrics.fp;
    m.tn += r.metrics.tn;
    m.fn += r.metrics.fn;
    for (const auto& u : r.metrics.undefined) {
      if (std::find(m.undefined.begin(), m.undefined.end(), u) == m.undefined.end()) m.undefined.push_back(u);
    }
  }
  return m;
}

std::vector<double> predict_all(const models::Classifier& model, std::span<const Bag> bags,
                                std::vector<int>* labels) {
  std::vector<double> probs;
  for (const Bag& b : bags) {
    probs.push_back(model.predict(b.features));
    if (labels != nullptr) labels->push_back(b.label);
  }
  return probs;
}

}  // namespace

ExperimentReport run_experiment(std::span<const Bag> bags, const ExperimentConfig& cfg,
                                const std::optional<fs::path>& out_root, const io::Json& inputs) {
  if (bags.empty()) throw DataError("experiment: no bags");
  for (const Bag& b : bags) {
    if (b.mode != cfg.train.mode) {
      throw DataError("experiment: bag " + b.window_id + " has feature mode '" +
                      std::string(features::to_string(b.mode)) + "', config requests '" +
                      std::string(features::to_string(cfg.train.mode)) + "'");
    }
  }
  ExperimentReport rep;
  rep.config = cfg;
  const auto people = participants_of(bags);
  rep.split = person_disjoint_split(people, cfg.split_seed, cfg.test_per_class, cfg.val_per_class);

  std::vector<Bag> relabeled;
  std::span<const Bag> data = bags;
  if (cfg.shuffle_labels) {
    relabeled = shuffled_labels(bags, cfg.split_seed);
    data = relabeled;
  }
  const SplitBags sb = apply_split(rep.split, data);
  const models::ModelSpec spec = cfg.model_spec();

  const io::Json cfg_json = cfg.to_json();
  if (out_root) {
    rep.run_dir = *out_root / ("run-" + config_hash(cfg_json));
    fs::create_directories(rep.run_dir);
    io::write_json(rep.run_dir / "config.json", cfg_json);
    io::write_json(rep.run_dir / "split.json", rep.split.to_json());
  }

  for (std::uint64_t seed : cfg.train.seeds) {
    SeedResult sr;
    sr.seed = seed;
    std::unique_ptr<models::Classifier> model;
    try {
      model = models::train_model(spec, sb.train, sb.val, cfg.train, seed, &sr.training);
    } catch (const NumericError& e) {
      throw NumericError("seed " + std::to_string(seed) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("seed " + std::to_string(seed) + ": " + e.what());
    }
    std::vector<int> labels;
    sr.test_probabilities = predict_all(*model, sb.test, &labels);
    sr.metrics = compute_metrics(sr.test_probabilities, labels);
    if (out_root) {
      const io::Json extra = {{"config", cfg_json}, {"seed", seed}};
      sr.weights = models::save_model(*model, rep.run_dir / ("seed_" + std::to_string(seed)), extra).weights;
      io::write_json(rep.run_dir / ("history_seed_" + std::to_string(seed) + ".json"), sr.training.to_json());
    }
    rep.per_seed.push_back(std::move(sr));
  }
  rep.mean = average(rep.per_seed);

  if (out_root) {
    io::Json j = rep.to_json();
    j["inputs"] = inputs;
    io::write_json(rep.run_dir / "report.json", j);
  }
  return rep;
}

std::vector<MetricsReport> evaluate_run(const fs::path& run_dir, std::span<const Bag> bags) {
  const ExperimentConfig cfg = ExperimentConfig::from_json(io::read_json(run_dir / "config.json"));
  const SplitSpec split = SplitSpec::from_json(io::read_json(run_dir / "split.json"));
  std::vector<Bag> relabeled;
  std::span<const Bag> data = bags;
  if (cfg.shuffle_labels) {
    relabeled = shuffled_labels(bags, cfg.split_seed);
    data = relabeled;
  }
  const SplitBags sb = apply_split(split, data);
  std::vector<MetricsReport> out;
  for (std::uint64_t seed : cfg.train.seeds) {
    const auto model = models::load_model(run_dir / ("seed_" + std::to_string(seed) + ".miml"));
    std::vector<int> labels;
    const auto probs = predict_all(*model, sb.test, &labels);
    out.push_back(compute_metrics(probs, labels));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Latency

io::Json LatencyStats::to_json() const {
  return {{"mean_s", mean_s}, {"p95_s", p95_s}, {"max_s", max_s}, {"n_iters", n_iters}};
}

io::Json BenchReport::to_json() const {
  return {{"model_only", model_only.to_json()}, {"with_features", with_features.to_json()}};
}

LatencyStats bench_latency(const std::function<void()>& fn, int n_iters, int warmup) {
  if (n_iters < 1) throw ParameterError("bench: n_iters must be >= 1");
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> t;
  t.reserve(static_cast<std::size_t>(n_iters));
  for (int i = 0; i < n_iters; ++i) {
    const auto a = std::chrono::steady_clock::now();
    fn();
    const auto b = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double>(b - a).count());
  }
  LatencyStats s;
  s.n_iters = n_iters;
  double sum = 0.0;
  for (double v : t) sum += v;
  s.mean_s = sum / static_cast<double>(n_iters);
  std::sort(t.begin(), t.end());
  const auto idx = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(n_iters))) - 1;
  s.p95_s = t[std::min(idx, t.size() - 1)];
  s.max_s = t.back();
  return s;
}

BenchReport bench_model(const models::Classifier& model, const signal::Window& window,
                        const features::BaselineScore* baseline, int n_iters) {
  const auto mode = model.spec().mode;
  const Matrix x = features::featurize(features::raw_features(window), mode, baseline);
  volatile double sink = 0.0;
  BenchReport r;
  r.model_only = bench_latency([&] { sink = sink + model.predict(x); }, n_iters);
  r.with_features = bench_latency(
      [&] {
        const Matrix f = features::featurize(features::raw_features(window), mode, baseline);
        sink = sink + model.predict(f);
      },
      n_iters);
  return r;
}

}  // namespace mimil::eval
