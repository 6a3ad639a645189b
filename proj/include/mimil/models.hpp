#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mimil/bag.hpp"
#include "mimil/features.hpp"
#include "mimil/io.hpp"
#include "mimil/nn.hpp"

namespace mimil::models {

enum class ModelKind { Mimil, AttnMil, InstMax, Dnn };
std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view s);

// Layer widths. Defaults reproduce the published layer configuration; the
// gradient checks use shrunken variants.
struct ModelSpec {
  ModelKind kind = ModelKind::Mimil;
  features::FeatureMode mode = features::FeatureMode::Raw;
  double dropout = 0.1;

  // MI-MIL
  int embed_hidden = 128;
  int embed_dim = 256;  // p (= M)
  int attn_dim = 256;   // L
  int fused_channels = 2;
  int cls_hidden1 = 256;
  int cls_hidden2 = 64;

  // attention-MIL
  int amil_hidden1 = 200;
  int amil_hidden2 = 64;
  int amil_embed = 128;
  int amil_attn = 64;
  int amil_cls = 64;

  // DNN
  int dnn_hidden1 = 512;
  int dnn_hidden2 = 128;

  // instance-max MIL
  int inst_hidden = 64;

  io::Json to_json() const;
  static ModelSpec from_json(const io::Json& j);
  // Small widths for finite-difference checks.
  static ModelSpec tiny(ModelKind kind, features::FeatureMode mode);
};

// Per-feature z-scoring fitted on training instances only.
struct Standardizer {
  RowVector mean;
  RowVector scale;

  bool fitted() const { return mean.size() > 0; }
  void fit(std::span<const Bag> bags);
  Matrix apply(const Matrix& x) const;
  io::Json to_json() const;
  static Standardizer from_json(const io::Json& j);
};

struct Inference {
  double probability = 0.5;
  // MI-MIL: one array per modality; attention-MIL: "all"; others: empty.
  std::map<std::string, std::vector<double>> attention;
};

class Classifier {
 public:
  explicit Classifier(ModelSpec spec) : spec_(std::move(spec)) {}
  virtual ~Classifier() = default;
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;

  const ModelSpec& spec() const { return spec_; }
  ModelKind kind() const { return spec_.kind; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  Standardizer& standardizer() { return z_; }
  const Standardizer& standardizer() const { return z_; }

  // Bag logits (n x 1) for already standardized 19 x D inputs.
  virtual nn::Var batch_logits(nn::Tape& tape, std::span<const Matrix* const> xs, nn::Mode mode,
                               Rng* rng) = 0;

  // Eval-mode inference on an unstandardized 19 x D grid. Does not mutate the
  // model, so concurrent calls may share one instance.
  virtual Inference infer(const Matrix& x) const;
  double predict(const Matrix& x) const { return infer(x).probability; }
  double predict(const Bag& bag) const { return predict(bag.features); }
  std::vector<double> predict_batch(std::span<const Bag> bags) const;

  void check_input(const Matrix& x) const;

 protected:
  ModelSpec spec_;
  nn::ParameterStore params_;
  Standardizer z_;
};

std::unique_ptr<Classifier> make_classifier(const ModelSpec& spec, Rng& init_rng);

// --- MI-MIL building blocks -------------------------------------------------

struct EmbeddingVars {
  nn::Var w1, b1, w2, b2;
};

// Per-instance linear(d -> hidden) + ReLU, dropout, linear(hidden -> p).
nn::Var embed_modality(nn::Tape& t, nn::Var x, const EmbeddingVars& p, double dropout,
                       nn::Mode mode, Rng* rng);

struct PoolResult {
  nn::Var attention;  // k x 1
  nn::Var pooled;     // 1 x p
};

// Scores w^T tanh(V e_i^T); a = softmax over instances; t = sum_i a_i e_i.
PoolResult attention_pool(nn::Tape& t, nn::Var embeddings, nn::Var w, nn::Var v);

struct FusionVars {
  nn::Var w_theta, b_theta, w_phi, b_phi, w_g, b_g;
};

// Non-local fusion with modalities as channels and embedding dimensions as
// positions: A[i,j] = softmax_j(theta[:,i] . phi[:,j]); Z[:,i] = sum_j A[i,j] g[:,j].
nn::Var modality_fusion(nn::Tape& t, nn::Var stacked, const FusionVars& p);

struct ClassifierVars {
  nn::Var w1, b1, w2, b2, w3, b3;
};

// Flatten Z, linear+ReLU, linear+ReLU, linear -> logit (1 x 1).
nn::Var classify_logit(nn::Tape& t, nn::Var fused, const ClassifierVars& p);

struct MimilOutput {
  double probability = 0.5;
  std::array<std::vector<double>, features::kNumModalities> attention;
  Matrix bag_embeddings;  // 4 x p, rows t_m in canonical modality order
  Matrix fused;           // C_half x p
};

class MimilModel : public Classifier {
 public:
  explicit MimilModel(const ModelSpec& spec, Rng& rng);
  nn::Var batch_logits(nn::Tape& tape, std::span<const Matrix* const> xs, nn::Mode mode,
                       Rng* rng) override;
  Inference infer(const Matrix& x) const override;
  MimilOutput forward(const Matrix& x) const;

  struct Diagnostics {
    std::array<nn::Var, features::kNumModalities> attention;
    std::array<nn::Var, features::kNumModalities> pooled;
    nn::Var fused;
  };
  // One bag (standardized input) -> logit; fills diagnostics when non-null.
  nn::Var bag_logit(nn::Tape& tape, const Matrix& x, nn::Mode mode, Rng* rng, Diagnostics* diag);
};

class AttnMilModel : public Classifier {
 public:
  explicit AttnMilModel(const ModelSpec& spec, Rng& rng);
  nn::Var batch_logits(nn::Tape& tape, std::span<const Matrix* const> xs, nn::Mode mode,
                       Rng* rng) override;
  Inference infer(const Matrix& x) const override;
  // One logit per bag; attention (19 x 1 per bag) appended when non-null.
  std::vector<nn::Var> bag_logits(nn::Tape& tape, std::span<const Matrix* const> xs, nn::Mode mode,
                                  std::vector<nn::Var>* attention);
};

class InstMaxModel : public Classifier {
 public:
  explicit InstMaxModel(const ModelSpec& spec, Rng& rng);
  nn::Var batch_logits(nn::Tape& tape, std::span<const Matrix* const> xs, nn::Mode mode,
                       Rng* rng) override;
  // Per-instance probabilities for one standardized bag.
  std::vector<double> instance_scores(const Matrix& x) const;
};

class DnnModel : public Classifier {
 public:
  explicit DnnModel(const ModelSpec& spec, Rng& rng);
  nn::Var batch_logits(nn::Tape& tape, std::span<const Matrix* const> xs, nn::Mode mode,
                       Rng* rng) override;
};

// Bag score = max over instance scores.
double instance_max_predict(std::span<const double> instance_scores);

// --- Persistence ----------------------------------------------------------------

struct ModelArtifact {
  std::filesystem::path weights;
  std::filesystem::path sidecar;
};

// Writes `<stem>.miml` and `<stem>.json`. `extra` is merged into the sidecar
// (config echo, seed).
ModelArtifact save_model(const Classifier& model, const std::filesystem::path& stem,
                         const io::Json& extra = io::Json::object());
std::unique_ptr<Classifier> load_model(const std::filesystem::path& weights_path);
std::filesystem::path sidecar_path(const std::filesystem::path& weights_path);

// --- Ridge ranking ----------------------------------------------------------------

struct RankedFeature {
  int index = 0;
  double coefficient = 0.0;
};

// beta = (X^T X + lambda I)^-1 X^T (2y - 1), ranked by descending coefficient.
std::vector<RankedFeature> ridge_rank(const Matrix& x, std::span<const int> y, double lambda);
// Unsorted coefficients.
ColVector ridge_coefficients(const Matrix& x, std::span<const int> y, double lambda);

}  // namespace mimil::models
