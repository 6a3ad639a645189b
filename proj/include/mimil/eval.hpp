#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mimil/bag.hpp"
#include "mimil/io.hpp"
#include "mimil/models.hpp"
#include "mimil/signal.hpp"
#include "mimil/train.hpp"

namespace mimil::eval {

struct Participant {
  std::string id;
  signal::Group group = signal::Group::CWNS;
};

// Participants of a bag set; group from the majority bag label.
std::vector<Participant> participants_of(std::span<const Bag> bags);

struct SplitSpec {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;

  io::Json to_json() const;
  static SplitSpec from_json(const io::Json& j);
};

// 3 CWS + 3 CWNS for test and for validation, the rest for training.
// Throws DataError naming the deficit when a class has too few participants.
SplitSpec person_disjoint_split(std::span<const Participant> participants, std::uint64_t seed,
                                int test_per_class = 3, int val_per_class = 3);

// Throws DataError if any participant appears in two sets or a bag belongs to
// no set.
void check_disjoint(const SplitSpec& split, std::span<const Bag> bags);

struct SplitBags {
  std::vector<Bag> train, val, test;
};
SplitBags apply_split(const SplitSpec& split, std::span<const Bag> bags);

struct MetricsReport {
  double accuracy = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  long tp = 0, fp = 0, tn = 0, fn = 0;
  // Metrics whose denominator was zero (reported as 0).
  std::vector<std::string> undefined;

  io::Json to_json() const;
  static MetricsReport from_json(const io::Json& j);
};

MetricsReport metrics_from_counts(long tp, long fp, long tn, long fn);
// Positive class = CWS (label 1). Throws ParameterError on empty or unequal input.
MetricsReport compute_metrics(std::span<const double> probabilities, std::span<const int> labels,
                              double threshold = 0.5);

struct ExperimentConfig {
  models::ModelKind model = models::ModelKind::Mimil;
  models::TrainConfig train;
  io::Json model_overrides = io::Json::object();  // ModelSpec keys
  std::uint64_t split_seed = 0;
  int test_per_class = 3;
  int val_per_class = 3;
  // Null control: permute bag labels after splitting.
  bool shuffle_labels = false;

  models::ModelSpec model_spec() const;
  io::Json to_json() const;
  static ExperimentConfig from_json(const io::Json& j);
};

struct SeedResult {
  std::uint64_t seed = 0;
  MetricsReport metrics;
  models::TrainResult training;
  std::vector<double> test_probabilities;
  std::filesystem::path weights;
};

struct ExperimentReport {
  ExperimentConfig config;
  SplitSpec split;
  std::vector<SeedResult> per_seed;
  MetricsReport mean;  // metric fields averaged over seeds, counts summed
  std::filesystem::path run_dir;

  io::Json to_json() const;
};

// Per seed: split -> train -> test metrics. When `out_root` is set, writes a
// run directory named by the config hash holding config.json, split.json,
// per-seed weights and report.json.
ExperimentReport run_experiment(std::span<const Bag> bags, const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& out_root = std::nullopt,
                                const io::Json& inputs = io::Json::object());

std::string config_hash(const io::Json& config);

// Re-evaluates a stored run directory's weights on its recorded test split.
std::vector<MetricsReport> evaluate_run(const std::filesystem::path& run_dir, std::span<const Bag> bags);

struct LatencyStats {
  double mean_s = 0.0;
  double p95_s = 0.0;
  double max_s = 0.0;
  int n_iters = 0;
  io::Json to_json() const;
};

// Runs `fn` `warmup` times unmeasured, then `n_iters` times measured.
LatencyStats bench_latency(const std::function<void()>& fn, int n_iters, int warmup = 10);

struct BenchReport {
  LatencyStats model_only;
  LatencyStats with_features;
  io::Json to_json() const;
};

// Model-only inference on `features`, and extraction plus inference on `window`.
BenchReport bench_model(const models::Classifier& model, const signal::Window& window,
                        const features::BaselineScore* baseline, int n_iters);

}  // namespace mimil::eval
