#include "mimil/nn.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mimil/io.hpp"

namespace mimil::nn {

namespace {

std::string shape_str(const Matrix& m) {
  return "[" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + "]";
}

}  // namespace

ShapeError::ShapeError(const std::string& op, const Matrix& a, const Matrix& b)
    : ParameterError(op + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b)) {}

// ---------------------------------------------------------------------------
// Tensor / parameters

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void Tensor::validate() const {
  if (shape.empty() || shape.size() > 2) throw ParameterError("tensor rank must be 1 or 2");
  for (std::size_t d : shape) {
    if (d == 0) throw ParameterError("tensor dimensions must be positive");
  }
  if (data.size() != numel()) throw ParameterError("tensor data length does not match its shape");
}

Matrix Tensor::to_matrix() const {
  validate();
  const Eigen::Index rows = shape.size() == 1 ? 1 : static_cast<Eigen::Index>(shape[0]);
  const Eigen::Index cols = static_cast<Eigen::Index>(shape.back());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(data[static_cast<std::size_t>(i)]);
  return m;
}

Tensor Tensor::from_matrix(const Matrix& m, std::vector<std::size_t> shape) {
  Tensor t;
  t.shape = std::move(shape);
  t.data.resize(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.size(); ++i) t.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  t.validate();
  return t;
}

void round_to_storage(Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

ParameterStore::ParameterStore(const ParameterStore& other) : adam_t_(other.adam_t_) {
  for (const auto& p : other.params_) {
    index_[p->name] = params_.size();
    params_.push_back(std::make_unique<Parameter>(*p));
  }
}

ParameterStore& ParameterStore::operator=(const ParameterStore& other) {
  if (this != &other) {
    ParameterStore tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Parameter& ParameterStore::add(const std::string& name, Matrix init, std::vector<std::size_t> shape,
                               bool trainable) {
  if (contains(name)) throw ParameterError("duplicate parameter name '" + name + "'");
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  if (n != static_cast<std::size_t>(init.size())) {
    throw ParameterError("parameter '" + name + "': shape does not match initial value");
  }
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = std::move(shape);
  round_to_storage(init);
  p->grad = Matrix::Zero(init.rows(), init.cols());
  p->adam_m = Matrix::Zero(init.rows(), init.cols());
  p->adam_v = Matrix::Zero(init.rows(), init.cols());
  p->value = std::move(init);
  p->trainable = trainable;
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ParameterError("unknown parameter '" + name + "'");
  return *params_[it->second];
}

std::vector<Parameter*> ParameterStore::all() {
  std::vector<Parameter*> out;
  for (auto& p : params_) out.push_back(p.get());
  return out;
}

std::vector<const Parameter*> ParameterStore::all() const {
  std::vector<const Parameter*> out;
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

std::vector<std::pair<std::string, Tensor>> ParameterStore::to_tensors() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (const auto& p : params_) out.emplace_back(p->name, Tensor::from_matrix(p->value, p->shape));
  return out;
}

void ParameterStore::load_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  if (tensors.size() != params_.size()) {
    throw DataError("weight file has " + std::to_string(tensors.size()) + " tensors, model expects " +
                    std::to_string(params_.size()));
  }
  for (const auto& [name, t] : tensors) {
    if (!contains(name)) throw DataError("weight file contains unknown tensor '" + name + "'");
    Parameter& p = get(name);
    if (t.shape != p.shape) throw DataError("tensor '" + name + "' has the wrong shape");
    p.value = t.to_matrix();
  }
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  for (auto& p : params_) p->value = other.get(p->name).value;
}

Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                      Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  round_to_storage(m);
  return m;
}

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.requires_grad = record_ && p.trainable;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(Var v) const { return value_of(v.id); }

const Matrix& Tape::value_of(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external != nullptr ? *n.external : n.value;
}

Var Tape::push(Matrix value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Matrix& Tape::grad_of(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    const Matrix& v = n.external != nullptr ? *n.external : n.value;
    n.grad = Matrix::Zero(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (!record_) throw ParameterError("backward() on a non-recording tape");
  const Matrix& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) throw ParameterError("backward() needs a 1x1 loss");
  grad_of(loss.id)(0, 0) += 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.has_grad || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) n.param->grad += n.grad;
  }
}

// ---------------------------------------------------------------------------
// Operations

Var matmul(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  if (A.cols() != B.rows()) throw ShapeError("matmul", A, B);
  Matrix y;
  y.noalias() = A * B;
  return t.push(std::move(y), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs(a.id)) tp.grad_of(a.id).noalias() += g * tp.value_of(b.id).transpose();
    if (tp.needs(b.id)) tp.grad_of(b.id).noalias() += tp.value_of(a.id).transpose() * g;
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  if (A.cols() != B.cols()) throw ShapeError("matmul_nt", A, B);
  Matrix y;
  y.noalias() = A * B.transpose();
  return t.push(std::move(y), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs(a.id)) tp.grad_of(a.id).noalias() += g * tp.value_of(b.id);
    if (tp.needs(b.id)) tp.grad_of(b.id).noalias() += g.transpose() * tp.value_of(a.id);
  });
}

Var add(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw ShapeError("add", A, B);
  return t.push(A + B, t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs(a.id)) tp.grad_of(a.id) += g;
    if (tp.needs(b.id)) tp.grad_of(b.id) += g;
  });
}

Var sub(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw ShapeError("sub", A, B);
  return t.push(A - B, t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs(a.id)) tp.grad_of(a.id) += g;
    if (tp.needs(b.id)) tp.grad_of(b.id) -= g;
  });
}

Var mul(Tape& t, Var a, Var b) {
  const Matrix& A = t.value(a);
  const Matrix& B = t.value(b);
  if (A.rows() != B.rows() || A.cols() != B.cols()) throw ShapeError("mul", A, B);
  Matrix y = A.cwiseProduct(B);
  return t.push(std::move(y), t.requires_grad(a) || t.requires_grad(b), [a, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs(a.id)) tp.grad_of(a.id) += g.cwiseProduct(tp.value_of(b.id));
    if (tp.needs(b.id)) tp.grad_of(b.id) += g.cwiseProduct(tp.value_of(a.id));
  });
}

Var scale(Tape& t, Var a, double s) {
  return t.push(t.value(a) * s, t.requires_grad(a), [a, s](Tape& tp, int self) {
    tp.grad_of(a.id) += tp.grad_of(self) * s;
  });
}

Var add_row_bias(Tape& t, Var x, Var b) {
  const Matrix& X = t.value(x);
  const Matrix& B = t.value(b);
  if (B.rows() != 1 || B.cols() != X.cols()) throw ShapeError("add_row_bias", X, B);
  Matrix y = X.rowwise() + B.row(0);
  return t.push(std::move(y), t.requires_grad(x) || t.requires_grad(b), [x, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs(x.id)) tp.grad_of(x.id) += g;
    if (tp.needs(b.id)) tp.grad_of(b.id) += g.colwise().sum();
  });
}

Var add_col_bias(Tape& t, Var x, Var b) {
  const Matrix& X = t.value(x);
  const Matrix& B = t.value(b);
  if (B.rows() != 1 || B.cols() != X.rows()) throw ShapeError("add_col_bias", X, B);
  Matrix y = X.colwise() + B.row(0).transpose();
  return t.push(std::move(y), t.requires_grad(x) || t.requires_grad(b), [x, b](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    if (tp.needs(x.id)) tp.grad_of(x.id) += g;
    if (tp.needs(b.id)) tp.grad_of(b.id) += g.rowwise().sum().transpose();
  });
}

Var transpose(Tape& t, Var x) {
  Matrix y = t.value(x).transpose();
  return t.push(std::move(y), t.requires_grad(x), [x](Tape& tp, int self) {
    tp.grad_of(x.id) += tp.grad_of(self).transpose();
  });
}

Var reshape(Tape& t, Var x, Eigen::Index rows, Eigen::Index cols) {
  const Matrix& X = t.value(x);
  if (rows * cols != X.size()) {
    throw ParameterError("reshape: " + shape_str(X) + " cannot become [" + std::to_string(rows) +
                         "x" + std::to_string(cols) + "]");
  }
  Matrix y = Eigen::Map<const Matrix>(X.data(), rows, cols);
  return t.push(std::move(y), t.requires_grad(x), [x](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    Matrix& gx = tp.grad_of(x.id);
    Eigen::Map<Matrix>(gx.data(), gx.rows(), gx.cols()) +=
        Eigen::Map<const Matrix>(g.data(), gx.rows(), gx.cols());
  });
}

Var flatten(Tape& t, Var x) { return reshape(t, x, 1, t.value(x).size()); }

Var slice_cols(Tape& t, Var x, Eigen::Index offset, Eigen::Index width) {
  const Matrix& X = t.value(x);
  if (offset < 0 || width <= 0 || offset + width > X.cols()) {
    throw ParameterError("slice_cols: [" + std::to_string(offset) + ", +" + std::to_string(width) +
                         ") outside " + shape_str(X));
  }
  Matrix y = X.middleCols(offset, width);
  return t.push(std::move(y), t.requires_grad(x), [x, offset, width](Tape& tp, int self) {
    tp.grad_of(x.id).middleCols(offset, width) += tp.grad_of(self);
  });
}

Var concat_rows(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ParameterError("concat_rows: no inputs");
  const Eigen::Index cols = t.value(parts[0]).cols();
  Eigen::Index rows = 0;
  bool rg = false;
  for (Var p : parts) {
    const Matrix& P = t.value(p);
    if (P.cols() != cols) throw ShapeError("concat_rows", t.value(parts[0]), P);
    rows += P.rows();
    rg = rg || t.requires_grad(p);
  }
  Matrix y(rows, cols);
  Eigen::Index r = 0;
  for (Var p : parts) {
    const Matrix& P = t.value(p);
    y.middleRows(r, P.rows()) = P;
    r += P.rows();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return t.push(std::move(y), rg, [ids](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    Eigen::Index row = 0;
    for (Var p : ids) {
      const Eigen::Index n = tp.value_of(p.id).rows();
      if (tp.needs(p.id)) tp.grad_of(p.id) += g.middleRows(row, n);
      row += n;
    }
  });
}

Var sum(Tape& t, Var x) {
  Matrix y(1, 1);
  y(0, 0) = t.value(x).sum();
  return t.push(std::move(y), t.requires_grad(x), [x](Tape& tp, int self) {
    tp.grad_of(x.id).array() += tp.grad_of(self)(0, 0);
  });
}

Var max_all(Tape& t, Var x) {
  const Matrix& X = t.value(x);
  if (X.size() == 0) throw ParameterError("max_all: empty input");
  Eigen::Index idx = 0;
  for (Eigen::Index i = 1; i < X.size(); ++i) {
    if (X.data()[i] > X.data()[idx]) idx = i;
  }
  Matrix y(1, 1);
  y(0, 0) = X.data()[idx];
  return t.push(std::move(y), t.requires_grad(x), [x, idx](Tape& tp, int self) {
    tp.grad_of(x.id).data()[idx] += tp.grad_of(self)(0, 0);
  });
}

Var relu(Tape& t, Var x) {
  Matrix y = t.value(x).cwiseMax(0.0);
  return t.push(std::move(y), t.requires_grad(x), [x](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    tp.grad_of(x.id).array() += (tp.value_of(x.id).array() > 0.0).select(g.array(), 0.0);
  });
}

Var tanh(Tape& t, Var x) {
  Matrix y = t.value(x).array().tanh().matrix();
  return t.push(std::move(y), t.requires_grad(x), [x](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    const Matrix& yv = tp.value_of(self);
    tp.grad_of(x.id).array() += g.array() * (1.0 - yv.array().square());
  });
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Var sigmoid(Tape& t, Var x) {
  Matrix y = t.value(x).unaryExpr([](double v) { return sigmoid(v); });
  return t.push(std::move(y), t.requires_grad(x), [x](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    const Matrix& yv = tp.value_of(self);
    tp.grad_of(x.id).array() += g.array() * yv.array() * (1.0 - yv.array());
  });
}

Var softmax(Tape& t, Var x, int axis) {
  if (axis != 0 && axis != 1) throw ParameterError("softmax: axis must be 0 or 1");
  const Matrix& X = t.value(x);
  Matrix y(X.rows(), X.cols());
  if (axis == 1) {
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      const double mx = X.row(r).maxCoeff();
      y.row(r) = (X.row(r).array() - mx).exp().matrix();
      y.row(r) /= y.row(r).sum();
    }
  } else {
    for (Eigen::Index c = 0; c < X.cols(); ++c) {
      const double mx = X.col(c).maxCoeff();
      y.col(c) = (X.col(c).array() - mx).exp().matrix();
      y.col(c) /= y.col(c).sum();
    }
  }
  return t.push(std::move(y), t.requires_grad(x), [x, axis](Tape& tp, int self) {
    const Matrix& g = tp.grad_of(self);
    const Matrix& yv = tp.value_of(self);
    Matrix gy = g.cwiseProduct(yv);
    if (axis == 1) {
      const ColVector s = gy.rowwise().sum();
      tp.grad_of(x.id) += gy - (yv.array().colwise() * s.array()).matrix();
    } else {
      const RowVector s = gy.colwise().sum();
      tp.grad_of(x.id) += gy - (yv.array().rowwise() * s.array()).matrix();
    }
  });
}

Var dropout(Tape& t, Var x, double p, Mode mode, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ParameterError("dropout: p must lie in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  if (rng == nullptr) throw ParameterError("dropout: train mode needs an rng");
  const Matrix& X = t.value(x);
  Matrix mask(X.rows(), X.cols());
  const double keep_scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < p ? 0.0 : keep_scale;
  Matrix y = X.cwiseProduct(mask);
  return t.push(std::move(y), t.requires_grad(x), [x, mask = std::move(mask)](Tape& tp, int self) {
    tp.grad_of(x.id) += tp.grad_of(self).cwiseProduct(mask);
  });
}

Var linear(Tape& t, Var x, Var w, Var b) { return add_row_bias(t, matmul(t, x, w), b); }

Var pointwise_conv(Tape& t, Var x, Var w, Var b) {
  const Matrix& X = t.value(x);
  const Matrix& W = t.value(w);
  if (W.cols() != X.rows()) throw ShapeError("pointwise_conv", W, X);
  return add_col_bias(t, matmul(t, w, x), b);
}

Var batch_norm(Tape& t, Var x, Parameter& gamma, Parameter& beta, Parameter& running_mean,
               Parameter& running_var, Mode mode, double momentum, double eps) {
  const Matrix& X = t.value(x);
  const Eigen::Index n = X.rows();
  const Eigen::Index d = X.cols();
  if (gamma.value.cols() != d || beta.value.cols() != d || running_mean.value.cols() != d ||
      running_var.value.cols() != d) {
    throw ShapeError("batch_norm", X, gamma.value);
  }
  RowVector mu, var;
  if (mode == Mode::Train) {
    mu = X.colwise().mean();
    var = (X.rowwise() - mu).array().square().colwise().mean().matrix();
    if (t.recording()) {
      const double unbias = n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
      running_mean.value = (1.0 - momentum) * running_mean.value + momentum * mu;
      running_var.value = (1.0 - momentum) * running_var.value + momentum * unbias * var;
      round_to_storage(running_mean.value);
      round_to_storage(running_var.value);
    }
  } else {
    mu = running_mean.value.row(0);
    var = running_var.value.row(0);
  }
  const RowVector inv = (var.array() + eps).rsqrt().matrix();
  Matrix xhat = ((X.rowwise() - mu).array().rowwise() * inv.array()).matrix();
  const Var g = t.param(gamma);
  const Var bta = t.param(beta);
  Matrix y = (xhat.array().rowwise() * gamma.value.row(0).array()).matrix();
  y.rowwise() += beta.value.row(0);
  const bool rg = t.requires_grad(x) || t.requires_grad(g) || t.requires_grad(bta);
  const bool train = mode == Mode::Train;
  return t.push(std::move(y), rg,
                [x, g, bta, inv, train, xhat = std::move(xhat)](Tape& tp, int self) {
                  const Matrix& gy = tp.grad_of(self);
                  const RowVector gam = tp.value_of(g.id).row(0);
                  if (tp.needs(g.id)) tp.grad_of(g.id) += gy.cwiseProduct(xhat).colwise().sum();
                  if (tp.needs(bta.id)) tp.grad_of(bta.id) += gy.colwise().sum();
                  if (!tp.needs(x.id)) return;
                  const Matrix dxhat = (gy.array().rowwise() * gam.array()).matrix();
                  if (!train) {
                    tp.grad_of(x.id) += (dxhat.array().rowwise() * inv.array()).matrix();
                    return;
                  }
                  const double nn = static_cast<double>(dxhat.rows());
                  const RowVector s1 = dxhat.colwise().sum();
                  const RowVector s2 = dxhat.cwiseProduct(xhat).colwise().sum();
                  Matrix dx = (dxhat * nn).rowwise() - s1;
                  dx -= (xhat.array().rowwise() * s2.array()).matrix();
                  dx = (dx.array().rowwise() * (inv.array() / nn)).matrix();
                  tp.grad_of(x.id) += dx;
                });
}

double bce_loss(double p, int y) {
  const double pc = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
}

Var bce_with_logits(Tape& t, Var logits, std::span<const double> targets,
                    std::span<const double> weights) {
  const Matrix& z = t.value(logits);
  const auto n = static_cast<std::size_t>(z.size());
  if (z.cols() != 1 || targets.size() != n || weights.size() != n) {
    throw ParameterError("bce_with_logits: expected n x 1 logits with n targets and weights");
  }
  double wsum = 0.0;
  double loss = 0.0;
  Matrix dz(z.rows(), 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(z(static_cast<Eigen::Index>(i), 0));
    const double pc = std::clamp(p, 1e-7, 1.0 - 1e-7);
    const double y = targets[i];
    loss += weights[i] * -(y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc));
    dz(static_cast<Eigen::Index>(i), 0) = weights[i] * (p - y);
    wsum += weights[i];
  }
  if (!(wsum > 0.0)) throw ParameterError("bce_with_logits: weights must sum to a positive value");
  Matrix out(1, 1);
  out(0, 0) = loss / wsum;
  dz /= wsum;
  return t.push(std::move(out), t.requires_grad(logits), [logits, dz = std::move(dz)](Tape& tp, int self) {
    tp.grad_of(logits.id) += dz * tp.grad_of(self)(0, 0);
  });
}

// ---------------------------------------------------------------------------
// Adam

void adam_step(ParameterStore& store, const AdamConfig& cfg) {
  for (Parameter* p : store.all()) {
    if (!p->trainable) continue;
    if (!p->grad.allFinite()) {
      throw NumericError("non-finite gradient in parameter '" + p->name + "'");
    }
  }
  const std::int64_t t = ++store.adam_steps();
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (Parameter* p : store.all()) {
    if (!p->trainable) continue;
    p->adam_m = cfg.beta1 * p->adam_m + (1.0 - cfg.beta1) * p->grad;
    p->adam_v = cfg.beta2 * p->adam_v + (1.0 - cfg.beta2) * p->grad.cwiseAbs2();
    p->value.array() -= cfg.lr * (p->adam_m.array() / bc1) /
                         ((p->adam_v.array() / bc2).sqrt() + cfg.eps);
    round_to_storage(p->value);
  }
}

// ---------------------------------------------------------------------------
// Weight files

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() {
    const auto b = take(2);
    return static_cast<std::uint16_t>(static_cast<std::uint8_t>(b[0]) |
                                      (static_cast<std::uint8_t>(b[1]) << 8));
  }
  std::uint32_t u32() {
    const auto b = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(b[i])) << (8 * i);
    return v;
  }
  std::string_view take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw DataError("weight file truncated");
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::string encode_weights(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::string out = "MIML";
  put_u32(out, kWeightFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    t.validate();
    if (name.size() > 0xFFFF) throw ParameterError("tensor name too long");
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(t.shape.size()));
    for (std::size_t d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : t.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, sizeof bits);
      put_u32(out, bits);
    }
  }
  put_u32(out, crc32_of(out));
  return out;
}

std::vector<std::pair<std::string, Tensor>> decode_weights(const std::string& bytes) {
  if (bytes.size() < 16 || bytes.compare(0, 4, "MIML") != 0) {
    throw DataError("not a weight file (bad magic)");
  }
  const std::string_view body(bytes.data(), bytes.size() - 4);
  Reader crc_reader(std::string_view(bytes).substr(bytes.size() - 4));
  if (crc_reader.u32() != crc32_of(body)) throw DataError("weight file CRC mismatch");

  Reader r(body);
  r.take(4);
  const std::uint32_t version = r.u32();
  if (version != kWeightFormatVersion) {
    throw DataError("unsupported weight format version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::string, Tensor>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = r.u16();
    std::string name(r.take(len));
    Tensor t;
    const std::uint8_t rank = r.u8();
    for (std::uint8_t k = 0; k < rank; ++k) t.shape.push_back(r.u32());
    std::size_t n = 1;
    for (std::size_t d : t.shape) n *= d;
    t.data.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::uint32_t bits = r.u32();
      std::memcpy(&t.data[k], &bits, sizeof bits);
    }
    try {
      t.validate();
    } catch (const ParameterError& e) {
      throw DataError("tensor '" + name + "': " + e.what());
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  if (r.pos() != body.size()) throw DataError("trailing bytes in weight file");
  return out;
}

void save_weights(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
  io::write_text(path, encode_weights(tensors));
}

std::vector<std::pair<std::string, Tensor>> load_weights(const std::filesystem::path& path) {
  return decode_weights(io::read_text(path));
}

}  // namespace mimil::nn
