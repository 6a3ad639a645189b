#include "mimil/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mimil::models {

using features::FeatureMode;
using features::Modality;
using nn::Mode;
using nn::Tape;
using nn::Var;

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Mimil: return "mimil";
    case ModelKind::AttnMil: return "attnmil";
    case ModelKind::InstMax: return "instmax";
    case ModelKind::Dnn: return "dnn";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "mimil") return ModelKind::Mimil;
  if (s == "attnmil") return ModelKind::AttnMil;
  if (s == "instmax") return ModelKind::InstMax;
  if (s == "dnn") return ModelKind::Dnn;
  throw ParameterError("unknown model '" + std::string(s) + "' (mimil|attnmil|instmax|dnn)");
}

// ---------------------------------------------------------------------------
// Spec

io::Json ModelSpec::to_json() const {
  return {{"kind", std::string(to_string(kind))},
          {"feature_mode", std::string(features::to_string(mode))},
          {"dropout", dropout},
          {"embed_hidden", embed_hidden},
          {"embed_dim", embed_dim},
          {"attn_dim", attn_dim},
          {"fused_channels", fused_channels},
          {"cls_hidden1", cls_hidden1},
          {"cls_hidden2", cls_hidden2},
          {"amil_hidden1", amil_hidden1},
          {"amil_hidden2", amil_hidden2},
          {"amil_embed", amil_embed},
          {"amil_attn", amil_attn},
          {"amil_cls", amil_cls},
          {"dnn_hidden1", dnn_hidden1},
          {"dnn_hidden2", dnn_hidden2},
          {"inst_hidden", inst_hidden}};
}

ModelSpec ModelSpec::from_json(const io::Json& j) {
  ModelSpec s;
  for (const auto& [key, val] : j.items()) {
    if (key == "kind") s.kind = parse_model_kind(val.get<std::string>());
    else if (key == "feature_mode") s.mode = features::parse_feature_mode(val.get<std::string>());
    else if (key == "dropout") s.dropout = val.get<double>();
    else if (key == "embed_hidden") s.embed_hidden = val.get<int>();
    else if (key == "embed_dim") s.embed_dim = val.get<int>();
    else if (key == "attn_dim") s.attn_dim = val.get<int>();
    else if (key == "fused_channels") s.fused_channels = val.get<int>();
    else if (key == "cls_hidden1") s.cls_hidden1 = val.get<int>();
    else if (key == "cls_hidden2") s.cls_hidden2 = val.get<int>();
    else if (key == "amil_hidden1") s.amil_hidden1 = val.get<int>();
    else if (key == "amil_hidden2") s.amil_hidden2 = val.get<int>();
    else if (key == "amil_embed") s.amil_embed = val.get<int>();
    else if (key == "amil_attn") s.amil_attn = val.get<int>();
    else if (key == "amil_cls") s.amil_cls = val.get<int>();
    else if (key == "dnn_hidden1") s.dnn_hidden1 = val.get<int>();
    else if (key == "dnn_hidden2") s.dnn_hidden2 = val.get<int>();
    else if (key == "inst_hidden") s.inst_hidden = val.get<int>();
    else throw ConfigError("model spec: unknown key '" + key + "'");
  }
  return s;
}

ModelSpec ModelSpec::tiny(ModelKind kind, FeatureMode mode) {
  ModelSpec s;
  s.kind = kind;
  s.mode = mode;
  s.embed_hidden = 5;
  s.embed_dim = 6;
  s.attn_dim = 4;
  s.cls_hidden1 = 5;
  s.cls_hidden2 = 3;
  s.amil_hidden1 = 6;
  s.amil_hidden2 = 5;
  s.amil_embed = 4;
  s.amil_attn = 3;
  s.amil_cls = 3;
  s.dnn_hidden1 = 6;
  s.dnn_hidden2 = 4;
  s.inst_hidden = 4;
  return s;
}

// ---------------------------------------------------------------------------
// Standardizer

void Standardizer::fit(std::span<const Bag> bags) {
  if (bags.empty()) throw DataError("standardizer: no training bags");
  const Eigen::Index d = bags.front().features.cols();
  RowVector sum = RowVector::Zero(d);
  double rows = 0.0;
  for (const Bag& b : bags) {
    if (b.features.cols() != d) throw DataError("standardizer: inconsistent feature widths");
    sum += b.features.colwise().sum();
    rows += static_cast<double>(b.features.rows());
  }
  mean = sum / rows;
  RowVector ss = RowVector::Zero(d);
  for (const Bag& b : bags) ss += (b.features.rowwise() - mean).array().square().colwise().sum().matrix();
  scale = (ss / rows).array().sqrt().matrix();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(scale(j) > 1e-12)) scale(j) = 1.0;
  }
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (!fitted()) return x;
  if (x.cols() != mean.size()) {
    throw ParameterError("standardizer: input has " + std::to_string(x.cols()) +
                         " columns, statistics have " + std::to_string(mean.size()));
  }
  return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

io::Json Standardizer::to_json() const {
  std::vector<double> m(mean.data(), mean.data() + mean.size());
  std::vector<double> s(scale.data(), scale.data() + scale.size());
  return {{"mean", m}, {"scale", s}};
}

Standardizer Standardizer::from_json(const io::Json& j) {
  Standardizer z;
  const auto m = j.at("mean").get<std::vector<double>>();
  const auto s = j.at("scale").get<std::vector<double>>();
  if (m.size() != s.size()) throw DataError("z-score statistics have mismatched lengths");
  z.mean = Eigen::Map<const RowVector>(m.data(), static_cast<Eigen::Index>(m.size()));
  z.scale = Eigen::Map<const RowVector>(s.data(), static_cast<Eigen::Index>(s.size()));
  return z;
}

// ---------------------------------------------------------------------------
// Classifier base

void Classifier::check_input(const Matrix& x) const {
  const int want = features::num_columns(spec_.mode);
  if (x.rows() != features::kNumSegments || x.cols() != want) {
    throw DataError("model expects a " + std::to_string(features::kNumSegments) + "x" +
                         std::to_string(want) + " grid, got " + std::to_string(x.rows()) + "x" +
                         std::to_string(x.cols()));
  }
}

Inference Classifier::infer(const Matrix& x) const {
  check_input(x);
  const Matrix xs = z_.apply(x);
  Tape tape(false);
  const Matrix* ptr = &xs;
  // Eval mode on a non-recording tape leaves parameters and buffers untouched.
  auto* self = const_cast<Classifier*>(this);
  const Var logit = self->batch_logits(tape, std::span<const Matrix* const>(&ptr, 1), Mode::Eval, nullptr);
  Inference out;
  out.probability = nn::sigmoid(tape.value(logit)(0, 0));
  return out;
}

std::vector<double> Classifier::predict_batch(std::span<const Bag> bags) const {
  std::vector<double> out;
  out.reserve(bags.size());
  for (const Bag& b : bags) out.push_back(predict(b.features));
  return out;
}

namespace {

Var param(Tape& t, nn::ParameterStore& store, const std::string& name) {
  return t.param(store.get(name));
}

void add_linear(nn::ParameterStore& store, const std::string& prefix, int in, int out, Rng& rng) {
  const auto i = static_cast<std::size_t>(in);
  const auto o = static_cast<std::size_t>(out);
  store.add(prefix + ".w", nn::glorot_uniform(i, o, i, o, rng), {i, o});
  store.add(prefix + ".b", Matrix::Zero(1, out), {o});
}

void add_batch_norm(nn::ParameterStore& store, const std::string& prefix, int width) {
  const auto w = static_cast<std::size_t>(width);
  store.add(prefix + ".gamma", Matrix::Ones(1, width), {w});
  store.add(prefix + ".beta", Matrix::Zero(1, width), {w});
  store.add(prefix + ".running_mean", Matrix::Zero(1, width), {w}, false);
  store.add(prefix + ".running_var", Matrix::Ones(1, width), {w}, false);
}

Var batch_norm_named(Tape& t, Var x, nn::ParameterStore& store, const std::string& prefix, Mode mode) {
  return nn::batch_norm(t, x, store.get(prefix + ".gamma"), store.get(prefix + ".beta"),
                        store.get(prefix + ".running_mean"), store.get(prefix + ".running_var"), mode);
}

Var linear_named(Tape& t, Var x, nn::ParameterStore& store, const std::string& prefix) {
  return nn::linear(t, x, param(t, store, prefix + ".w"), param(t, store, prefix + ".b"));
}

std::vector<double> column_values(const Matrix& m) {
  return std::vector<double>(m.data(), m.data() + m.size());
}

std::string modality_key(Modality m) { return std::string(features::to_string(m)); }

}  // namespace

// ---------------------------------------------------------------------------
// MI-MIL blocks

Var embed_modality(Tape& t, Var x, const EmbeddingVars& p, double dropout, Mode mode, Rng* rng) {
  Var h = nn::relu(t, nn::linear(t, x, p.w1, p.b1));
  h = nn::dropout(t, h, dropout, mode, rng);
  return nn::linear(t, h, p.w2, p.b2);
}

PoolResult attention_pool(Tape& t, Var embeddings, Var w, Var v) {
  const Matrix& E = t.value(embeddings);
  const Matrix& W = t.value(w);
  const Matrix& V = t.value(v);
  if (V.cols() != E.cols() || W.rows() != V.rows() || W.cols() != 1) {
    throw nn::ShapeError("attention_pool", V, E);
  }
  const Var hidden = nn::tanh(t, nn::matmul_nt(t, embeddings, v));  // k x L
  const Var scores = nn::matmul(t, hidden, w);                       // k x 1
  const Var attn = nn::softmax(t, scores, 0);
  const Var pooled = nn::matmul(t, nn::transpose(t, attn), embeddings);  // 1 x p
  return {attn, pooled};
}

Var modality_fusion(Tape& t, Var stacked, const FusionVars& p) {
  const Var theta = nn::pointwise_conv(t, stacked, p.w_theta, p.b_theta);  // C x N
  const Var phi = nn::pointwise_conv(t, stacked, p.w_phi, p.b_phi);
  const Var g = nn::pointwise_conv(t, stacked, p.w_g, p.b_g);
  const Var logits = nn::matmul(t, nn::transpose(t, theta), phi);  // N x N
  const Var attn = nn::softmax(t, logits, 1);
  return nn::matmul_nt(t, g, attn);  // C x N
}

Var classify_logit(Tape& t, Var fused, const ClassifierVars& p) {
  Var h = nn::flatten(t, fused);
  h = nn::relu(t, nn::linear(t, h, p.w1, p.b1));
  h = nn::relu(t, nn::linear(t, h, p.w2, p.b2));
  return nn::linear(t, h, p.w3, p.b3);
}

// ---------------------------------------------------------------------------
// MI-MIL model

MimilModel::MimilModel(const ModelSpec& spec, Rng& rng) : Classifier(spec) {
  const int d = features::modality_width(spec.mode);
  const auto p = static_cast<std::size_t>(spec.embed_dim);
  const auto l = static_cast<std::size_t>(spec.attn_dim);
  for (Modality m : features::kModalities) {
    const std::string k = modality_key(m);
    add_linear(params_, "emb." + k + ".l1", d, spec.embed_hidden, rng);
    add_linear(params_, "emb." + k + ".l2", spec.embed_hidden, spec.embed_dim, rng);
    params_.add("pool." + k + ".V", nn::glorot_uniform(l, p, p, l, rng), {l, p});
    params_.add("pool." + k + ".w", nn::glorot_uniform(l, 1, l, 1, rng), {l, 1});
  }
  const auto c_in = static_cast<std::size_t>(features::kNumModalities);
  const auto c_out = static_cast<std::size_t>(spec.fused_channels);
  for (const char* name : {"theta", "phi", "g"}) {
    const std::string pre = std::string("fusion.") + name;
    params_.add(pre + ".w", nn::glorot_uniform(c_out, c_in, c_in, c_out, rng), {c_out, c_in});
    params_.add(pre + ".b", Matrix::Zero(1, spec.fused_channels), {c_out});
  }
  add_linear(params_, "cls.l1", spec.fused_channels * spec.embed_dim, spec.cls_hidden1, rng);
  add_linear(params_, "cls.l2", spec.cls_hidden1, spec.cls_hidden2, rng);
  add_linear(params_, "cls.l3", spec.cls_hidden2, 1, rng);
}

Var MimilModel::bag_logit(Tape& t, const Matrix& x, Mode mode, Rng* rng, Diagnostics* diag) {
  const Var input = t.constant(x);
  const int width = features::modality_width(spec_.mode);
  std::vector<Var> pooled;
  pooled.reserve(features::kNumModalities);
  for (Modality m : features::kModalities) {
    const std::string k = modality_key(m);
    const EmbeddingVars ev{param(t, params_, "emb." + k + ".l1.w"), param(t, params_, "emb." + k + ".l1.b"),
                           param(t, params_, "emb." + k + ".l2.w"), param(t, params_, "emb." + k + ".l2.b")};
    const Var xm = nn::slice_cols(t, input, features::modality_offset(spec_.mode, m), width);
    const Var e = embed_modality(t, xm, ev, spec_.dropout, mode, rng);
    const PoolResult pr =
        attention_pool(t, e, param(t, params_, "pool." + k + ".w"), param(t, params_, "pool." + k + ".V"));
    pooled.push_back(pr.pooled);
    if (diag != nullptr) {
      diag->attention[static_cast<std::size_t>(m)] = pr.attention;
      diag->pooled[static_cast<std::size_t>(m)] = pr.pooled;
    }
  }
  const Var stacked = nn::concat_rows(t, pooled);
  const FusionVars fv{param(t, params_, "fusion.theta.w"), param(t, params_, "fusion.theta.b"),
                      param(t, params_, "fusion.phi.w"),   param(t, params_, "fusion.phi.b"),
                      param(t, params_, "fusion.g.w"),     param(t, params_, "fusion.g.b")};
  const Var fused = modality_fusion(t, stacked, fv);
  if (diag != nullptr) diag->fused = fused;
  const ClassifierVars cv{param(t, params_, "cls.l1.w"), param(t, params_, "cls.l1.b"),
                          param(t, params_, "cls.l2.w"), param(t, params_, "cls.l2.b"),
                          param(t, params_, "cls.l3.w"), param(t, params_, "cls.l3.b")};
  return classify_logit(t, fused, cv);
}

Var MimilModel::batch_logits(Tape& t, std::span<const Matrix* const> xs, Mode mode, Rng* rng) {
  std::vector<Var> logits;
  logits.reserve(xs.size());
  for (const Matrix* x : xs) logits.push_back(bag_logit(t, *x, mode, rng, nullptr));
  return nn::concat_rows(t, logits);
}

MimilOutput MimilModel::forward(const Matrix& x) const {
  check_input(x);
  const Matrix xs = z_.apply(x);
  Tape t(false);
  Diagnostics diag;
  auto* self = const_cast<MimilModel*>(this);
  const Var logit = self->bag_logit(t, xs, Mode::Eval, nullptr, &diag);
  MimilOutput out;
  out.probability = nn::sigmoid(t.value(logit)(0, 0));
  out.bag_embeddings.resize(features::kNumModalities, spec_.embed_dim);
  for (std::size_t m = 0; m < diag.attention.size(); ++m) {
    out.attention[m] = column_values(t.value(diag.attention[m]));
    out.bag_embeddings.row(static_cast<Eigen::Index>(m)) = t.value(diag.pooled[m]);
  }
  out.fused = t.value(diag.fused);
  return out;
}

Inference MimilModel::infer(const Matrix& x) const {
  const MimilOutput o = forward(x);
  Inference out;
  out.probability = o.probability;
  for (Modality m : features::kModalities) {
    out.attention[modality_key(m)] = o.attention[static_cast<std::size_t>(m)];
  }
  return out;
}

// ---------------------------------------------------------------------------
// attention-MIL baseline

AttnMilModel::AttnMilModel(const ModelSpec& spec, Rng& rng) : Classifier(spec) {
  const int d = features::num_columns(spec.mode);
  add_linear(params_, "emb.l1", d, spec.amil_hidden1, rng);
  add_linear(params_, "emb.l2", spec.amil_hidden1, spec.amil_hidden2, rng);
  add_batch_norm(params_, "emb.bn", spec.amil_hidden2);
  add_linear(params_, "emb.l3", spec.amil_hidden2, spec.amil_embed, rng);
  const auto l = static_cast<std::size_t>(spec.amil_attn);
  const auto p = static_cast<std::size_t>(spec.amil_embed);
  params_.add("pool.V", nn::glorot_uniform(l, p, p, l, rng), {l, p});
  params_.add("pool.w", nn::glorot_uniform(l, 1, l, 1, rng), {l, 1});
  add_linear(params_, "cls.l1", spec.amil_embed, spec.amil_cls, rng);
  add_linear(params_, "cls.l2", spec.amil_cls, 1, rng);
}

namespace {

Var slice_rows(Tape& t, Var x, Eigen::Index offset, Eigen::Index height) {
  return nn::transpose(t, nn::slice_cols(t, nn::transpose(t, x), offset, height));
}

}  // namespace

// Batch norm sees every instance of the mini-batch, so bags are embedded
// together and pooled separately.
std::vector<Var> AttnMilModel::bag_logits(Tape& t, std::span<const Matrix* const> xs, Mode mode,
                                          std::vector<Var>* attention) {
  std::vector<Var> inputs;
  inputs.reserve(xs.size());
  for (const Matrix* x : xs) inputs.push_back(t.constant(*x));
  Var h = xs.size() == 1 ? inputs.front() : nn::concat_rows(t, inputs);
  h = nn::relu(t, linear_named(t, h, params_, "emb.l1"));
  h = nn::relu(t, linear_named(t, h, params_, "emb.l2"));
  h = batch_norm_named(t, h, params_, "emb.bn", mode);
  const Var e = nn::relu(t, linear_named(t, h, params_, "emb.l3"));
  const Var w = param(t, params_, "pool.w");
  const Var v = param(t, params_, "pool.V");
  std::vector<Var> logits;
  Eigen::Index off = 0;
  for (const Matrix* x : xs) {
    const Var eb = xs.size() == 1 ? e : slice_rows(t, e, off, x->rows());
    off += x->rows();
    const PoolResult pr = attention_pool(t, eb, w, v);
    if (attention != nullptr) attention->push_back(pr.attention);
    Var c = nn::relu(t, linear_named(t, pr.pooled, params_, "cls.l1"));
    logits.push_back(linear_named(t, c, params_, "cls.l2"));
  }
  return logits;
}

Var AttnMilModel::batch_logits(Tape& t, std::span<const Matrix* const> xs, Mode mode, Rng*) {
  const std::vector<Var> logits = bag_logits(t, xs, mode, nullptr);
  return nn::concat_rows(t, logits);
}

Inference AttnMilModel::infer(const Matrix& x) const {
  check_input(x);
  const Matrix xs = z_.apply(x);
  Tape t(false);
  std::vector<Var> attn;
  auto* self = const_cast<AttnMilModel*>(this);
  const Matrix* one[] = {&xs};
  const Var logit = self->bag_logits(t, one, Mode::Eval, &attn).front();
  Inference out;
  out.probability = nn::sigmoid(t.value(logit)(0, 0));
  out.attention["all"] = column_values(t.value(attn.front()));
  return out;
}

// ---------------------------------------------------------------------------
// instance-max MIL baseline

double instance_max_predict(std::span<const double> instance_scores) {
  if (instance_scores.empty()) throw ParameterError("instance_max_predict: empty bag");
  return *std::max_element(instance_scores.begin(), instance_scores.end());
}

InstMaxModel::InstMaxModel(const ModelSpec& spec, Rng& rng) : Classifier(spec) {
  const int d = features::num_columns(spec.mode);
  add_linear(params_, "inst.l1", d, spec.inst_hidden, rng);
  add_linear(params_, "inst.l2", spec.inst_hidden, 1, rng);
}

Var InstMaxModel::batch_logits(Tape& t, std::span<const Matrix* const> xs, Mode, Rng*) {
  std::vector<Var> logits;
  logits.reserve(xs.size());
  for (const Matrix* x : xs) {
    Var h = nn::relu(t, linear_named(t, t.constant(*x), params_, "inst.l1"));
    // sigmoid is monotone, so the max instance logit gives the max instance score.
    logits.push_back(nn::max_all(t, linear_named(t, h, params_, "inst.l2")));
  }
  return nn::concat_rows(t, logits);
}

std::vector<double> InstMaxModel::instance_scores(const Matrix& x) const {
  Tape t(false);
  auto* self = const_cast<InstMaxModel*>(this);
  Var h = nn::relu(t, linear_named(t, t.constant(x), self->params_, "inst.l1"));
  const Matrix& z = t.value(linear_named(t, h, self->params_, "inst.l2"));
  std::vector<double> out;
  for (Eigen::Index i = 0; i < z.rows(); ++i) out.push_back(nn::sigmoid(z(i, 0)));
  return out;
}

// ---------------------------------------------------------------------------
// DNN baseline

DnnModel::DnnModel(const ModelSpec& spec, Rng& rng) : Classifier(spec) {
  const int d = features::num_columns(spec.mode) * features::kNumSegments;
  add_linear(params_, "l1", d, spec.dnn_hidden1, rng);
  add_linear(params_, "l2", spec.dnn_hidden1, spec.dnn_hidden2, rng);
  add_batch_norm(params_, "bn", spec.dnn_hidden2);
  add_linear(params_, "head", spec.dnn_hidden2, 1, rng);
}

Var DnnModel::batch_logits(Tape& t, std::span<const Matrix* const> xs, Mode mode, Rng*) {
  const Eigen::Index d = xs.front()->size();
  Matrix flat(static_cast<Eigen::Index>(xs.size()), d);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    flat.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const RowVector>(xs[i]->data(), d);
  }
  Var h = t.constant(std::move(flat));
  h = nn::relu(t, linear_named(t, h, params_, "l1"));
  h = nn::relu(t, linear_named(t, h, params_, "l2"));
  h = batch_norm_named(t, h, params_, "bn", mode);
  return linear_named(t, h, params_, "head");
}

// ---------------------------------------------------------------------------

std::unique_ptr<Classifier> make_classifier(const ModelSpec& spec, Rng& init_rng) {
  switch (spec.kind) {
    case ModelKind::Mimil: return std::make_unique<MimilModel>(spec, init_rng);
    case ModelKind::AttnMil: return std::make_unique<AttnMilModel>(spec, init_rng);
    case ModelKind::InstMax: return std::make_unique<InstMaxModel>(spec, init_rng);
    case ModelKind::Dnn: return std::make_unique<DnnModel>(spec, init_rng);
  }
  throw ParameterError("unknown model kind");
}

std::filesystem::path sidecar_path(const std::filesystem::path& weights_path) {
  std::filesystem::path p = weights_path;
  p.replace_extension(".json");
  return p;
}

ModelArtifact save_model(const Classifier& model, const std::filesystem::path& stem,
                         const io::Json& extra) {
  ModelArtifact art;
  art.weights = stem;
  art.weights += ".miml";
  art.sidecar = sidecar_path(art.weights);
  nn::save_weights(art.weights, model.params().to_tensors());
  io::Json side = extra.is_object() ? extra : io::Json::object();
  side["architecture"] = std::string(to_string(model.kind()));
  side["feature_mode"] = std::string(features::to_string(model.spec().mode));
  side["spec"] = model.spec().to_json();
  side["zscore"] = model.standardizer().to_json();
  io::write_json(art.sidecar, side);
  return art;
}

std::unique_ptr<Classifier> load_model(const std::filesystem::path& weights_path) {
  const io::Json side = io::read_json(sidecar_path(weights_path));
  ModelSpec spec;
  Standardizer z;
  try {
    spec = ModelSpec::from_json(side.at("spec"));
    z = Standardizer::from_json(side.at("zscore"));
  } catch (const io::Json::exception& e) {
    throw DataError(sidecar_path(weights_path).string() + ": " + e.what());
  }
  Rng rng(0);
  auto model = make_classifier(spec, rng);
  model->params().load_tensors(nn::load_weights(weights_path));
  model->standardizer() = std::move(z);
  return model;
}

// ---------------------------------------------------------------------------
// Ridge

ColVector ridge_coefficients(const Matrix& x, std::span<const int> y, double lambda) {
  if (!(lambda > 0.0)) throw ParameterError("ridge: lambda must be positive");
  if (x.rows() == 0 || static_cast<std::size_t>(x.rows()) != y.size()) {
    throw ParameterError("ridge: need one label per row and at least one row");
  }
  ColVector target(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) target(i) = 2.0 * y[static_cast<std::size_t>(i)] - 1.0;
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += lambda;
  const Eigen::VectorXd rhs = x.transpose() * target;
  return gram.ldlt().solve(rhs);
}

std::vector<RankedFeature> ridge_rank(const Matrix& x, std::span<const int> y, double lambda) {
  const ColVector beta = ridge_coefficients(x, y, lambda);
  std::vector<RankedFeature> out;
  for (Eigen::Index j = 0; j < beta.size(); ++j) out.push_back({static_cast<int>(j), beta(j)});
  std::stable_sort(out.begin(), out.end(),
                   [](const RankedFeature& a, const RankedFeature& b) { return a.coefficient > b.coefficient; });
  return out;
}

}  // namespace mimil::models
