#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "mimil/bag.hpp"
#include "mimil/io.hpp"
#include "mimil/models.hpp"

namespace mimil::models {

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 200;
  int patience = 20;
  int batch_size = 16;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  features::FeatureMode mode = features::FeatureMode::Raw;
  double dropout = 0.1;
  bool class_weighting = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
  io::Json to_json() const;
  // Unknown keys are rejected with ConfigError.
  static TrainConfig from_json(const io::Json& j);
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_f1 = 0.0;
};

struct TrainResult {
  std::uint64_t seed = 0;
  std::vector<EpochRecord> history;
  int best_epoch = -1;
  double best_val_f1 = 0.0;
  io::Json to_json() const;
};

// Fits the standardizer on `train`, then minimizes weighted BCE with Adam.
// Keeps the checkpoint with the best validation F1 (ties broken by lower
// validation loss) and stops after `patience` epochs without improvement.
// Throws DataError for a single-class training set and NumericError (naming
// seed and epoch) on divergence.
TrainResult train(Classifier& model, std::span<const Bag> train_bags, std::span<const Bag> val_bags,
                  const TrainConfig& cfg, std::uint64_t seed);

// Builds a model initialized from `seed` and trains it.
std::unique_ptr<Classifier> train_model(const ModelSpec& spec, std::span<const Bag> train_bags,
                                        std::span<const Bag> val_bags, const TrainConfig& cfg,
                                        std::uint64_t seed, TrainResult* result = nullptr);

// Weighted mean BCE of the model on a bag set, per-class weights w0, w1.
double evaluate_loss(const Classifier& model, std::span<const Bag> bags, double w0 = 1.0,
                     double w1 = 1.0);

}  // namespace mimil::models
