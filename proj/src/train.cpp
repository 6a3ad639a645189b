#include "mimil/train.hpp"

#include <cmath>
#include <numeric>

#include "mimil/eval.hpp"

namespace mimil::models {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train: lr must be positive");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (seeds.empty()) throw ConfigError("train: seeds must be non-empty");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train: dropout must be in [0, 1)");
}

io::Json TrainConfig::to_json() const {
  return {{"lr", lr},
          {"epochs", epochs},
          {"patience", patience},
          {"batch_size", batch_size},
          {"seeds", seeds},
          {"feature_mode", std::string(features::to_string(mode))},
          {"dropout", dropout},
          {"class_weighting", class_weighting},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps}};
}

TrainConfig TrainConfig::from_json(const io::Json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  TrainConfig c;
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "lr") c.lr = val.get<double>();
      else if (key == "epochs") c.epochs = val.get<int>();
      else if (key == "patience") c.patience = val.get<int>();
      else if (key == "batch_size") c.batch_size = val.get<int>();
      else if (key == "seeds") c.seeds = val.get<std::vector<std::uint64_t>>();
      else if (key == "feature_mode") c.mode = features::parse_feature_mode(val.get<std::string>());
      else if (key == "dropout") c.dropout = val.get<double>();
      else if (key == "class_weighting") c.class_weighting = val.get<bool>();
      else if (key == "beta1") c.beta1 = val.get<double>();
      else if (key == "beta2") c.beta2 = val.get<double>();
      else if (key == "eps") c.eps = val.get<double>();
      else throw ConfigError("train config: unknown key '" + key + "'");
    } catch (const io::Json::exception& e) {
      throw ConfigError("train config key '" + key + "': " + e.what());
    } catch (const ParameterError& e) {
      throw ConfigError("train config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

io::Json TrainResult::to_json() const {
  io::Json hist = io::Json::array();
  for (const auto& e : history) {
    hist.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"val_loss", e.val_loss},
                    {"val_f1", e.val_f1}});
  }
  return {{"seed", seed}, {"best_epoch", best_epoch}, {"best_val_f1", best_val_f1}, {"history", hist}};
}

double evaluate_loss(const Classifier& model, std::span<const Bag> bags, double w0, double w1) {
  double loss = 0.0, wsum = 0.0;
  for (const Bag& b : bags) {
    const double w = b.label == 1 ? w1 : w0;
    loss += w * nn::bce_loss(model.predict(b.features), b.label);
    wsum += w;
  }
  return wsum > 0.0 ? loss / wsum : 0.0;
}

TrainResult train(Classifier& model, std::span<const Bag> train_bags, std::span<const Bag> val_bags,
                  const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.mode != model.spec().mode) {
    throw ConfigError("train: config feature mode '" + std::string(features::to_string(cfg.mode)) +
                      "' differs from the model's '" + std::string(features::to_string(model.spec().mode)) + "'");
  }
  if (train_bags.empty()) throw DataError("train: empty training set");
  std::size_t n_pos = 0;
  for (const Bag& b : train_bags) {
    if (b.mode != model.spec().mode) {
      throw DataError("train: bag " + b.window_id + " has feature mode '" +
                      std::string(features::to_string(b.mode)) + "', model expects '" +
                      std::string(features::to_string(model.spec().mode)) + "'");
    }
    n_pos += b.label == 1 ? 1 : 0;
  }
  const std::size_t n = train_bags.size();
  if (n_pos == 0 || n_pos == n) throw DataError("train: training set contains a single class");

  double w1 = 1.0, w0 = 1.0;
  if (cfg.class_weighting) {
    w1 = static_cast<double>(n) / (2.0 * static_cast<double>(n_pos));
    w0 = static_cast<double>(n) / (2.0 * static_cast<double>(n - n_pos));
  }

  model.standardizer().fit(train_bags);
  std::vector<Matrix> xs;
  xs.reserve(n);
  for (const Bag& b : train_bags) xs.push_back(model.standardizer().apply(b.features));

  Rng root(seed);
  Rng order_rng = root.split(1);
  Rng dropout_rng = root.split(2);
  const nn::AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps};

  std::vector<int> val_labels;
  for (const Bag& b : val_bags) val_labels.push_back(b.label);

  TrainResult result;
  result.seed = seed;
  nn::ParameterStore best = model.params();
  double best_loss = std::numeric_limits<double>::infinity();
  int since_best = 0;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_loss = 0.0;
    std::size_t start = 0;
    while (start < n) {
      std::size_t stop = std::min(n, start + bs);
      // A trailing singleton batch would leave batch statistics undefined.
      if (n - stop == 1) stop = n;
      std::vector<const Matrix*> batch;
      std::vector<double> targets, weights;
      for (std::size_t i = start; i < stop; ++i) {
        const std::size_t k = order[i];
        batch.push_back(&xs[k]);
        targets.push_back(train_bags[k].label);
        weights.push_back(train_bags[k].label == 1 ? w1 : w0);
      }
      model.params().zero_grad();
      nn::Tape tape;
      const nn::Var logits = model.batch_logits(tape, batch, nn::Mode::Train, &dropout_rng);
      const nn::Var loss = nn::bce_with_logits(tape, logits, targets, weights);
      const double lv = tape.value(loss)(0, 0);
      if (!std::isfinite(lv)) {
        throw NumericError("training diverged (non-finite loss) at seed " + std::to_string(seed) +
                           ", epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      try {
        nn::adam_step(model.params(), adam);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at seed " + std::to_string(seed) + ", epoch " +
                           std::to_string(epoch));
      }
      epoch_loss += lv * static_cast<double>(stop - start);
      start = stop;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(n);
    if (!val_bags.empty()) {
      std::vector<double> probs;
      probs.reserve(val_bags.size());
      double vl = 0.0, vw = 0.0;
      for (const Bag& b : val_bags) {
        const double p = model.predict(b.features);
        probs.push_back(p);
        const double w = b.label == 1 ? w1 : w0;
        vl += w * nn::bce_loss(p, b.label);
        vw += w;
      }
      rec.val_loss = vl / vw;
      rec.val_f1 = eval::compute_metrics(probs, val_labels).f1;
    }
    result.history.push_back(rec);

    const bool improved =
        val_bags.empty() || rec.val_f1 > result.best_val_f1 + 1e-12 ||
        (std::abs(rec.val_f1 - result.best_val_f1) <= 1e-12 && rec.val_loss < best_loss);
    if (improved || result.best_epoch < 0) {
      result.best_epoch = epoch;
      result.best_val_f1 = rec.val_f1;
      best_loss = rec.val_loss;
      best.copy_values_from(model.params());
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  model.params().copy_values_from(best);
  return result;
}

std::unique_ptr<Classifier> train_model(const ModelSpec& spec, std::span<const Bag> train_bags,
                                        std::span<const Bag> val_bags, const TrainConfig& cfg,
                                        std::uint64_t seed, TrainResult* result) {
  Rng init = Rng(seed).split(0);
  auto model = make_classifier(spec, init);
  TrainResult r = train(*model, train_bags, val_bags, cfg, seed);
  if (result != nullptr) *result = std::move(r);
  return model;
}

}  // namespace mimil::models
