#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mimil/common.hpp"
#include "mimil/matrix.hpp"

// Minimal dense reverse-mode differentiation over 2-D matrices.
//
// Parameters are stored as float32-representable values (every write goes
// through round_to_storage) while all arithmetic, including reductions, runs
// in double. Rank-1 tensors are carried as 1 x n row matrices.
namespace mimil::nn {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<float> data;  // row-major

  std::size_t numel() const;
  void validate() const;
  Matrix to_matrix() const;  // rank 1 -> 1 x n
  static Tensor from_matrix(const Matrix& m, std::vector<std::size_t> shape);
};

void round_to_storage(Matrix& m);

struct Parameter {
  std::string name;
  std::vector<std::size_t> shape;
  Matrix value;
  Matrix grad;
  Matrix adam_m;
  Matrix adam_v;
  bool trainable = true;
};

class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore& other);
  ParameterStore& operator=(const ParameterStore& other);
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  // Throws ParameterError on a duplicate name.
  Parameter& add(const std::string& name, Matrix init, std::vector<std::size_t> shape,
                 bool trainable = true);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;

  void zero_grad();
  std::int64_t adam_steps() const { return adam_t_; }
  std::int64_t& adam_steps() { return adam_t_; }

  // Values only (gradients and optimizer moments are not persisted).
  std::vector<std::pair<std::string, Tensor>> to_tensors() const;
  // Shapes and names must match exactly.
  void load_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors);
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::int64_t adam_t_ = 0;
};

// Glorot-uniform weights, float-rounded.
Matrix glorot_uniform(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out,
                      Rng& rng);

// --- Tape ------------------------------------------------------------------

struct Var {
  int id = -1;
};

enum class Mode { Train, Eval };

class Tape {
 public:
  // A non-recording tape evaluates only; backward() is unavailable.
  explicit Tape(bool record = true) : record_(record) {}

  Var constant(Matrix value);
  Var param(Parameter& p);

  const Matrix& value(Var v) const;
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].requires_grad; }
  bool recording() const { return record_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and accumulates into Parameter::grad.
  void backward(Var loss);

  using Backward = std::function<void(Tape&, int self)>;
  Var push(Matrix value, bool requires_grad, Backward backward);
  Matrix& grad_of(int id);
  const Matrix& value_of(int id) const;
  bool needs(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

 private:
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    Parameter* param = nullptr;
    Matrix grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  bool record_;
};

// Shape mismatch errors name both operands.
class ShapeError : public ParameterError {
 public:
  ShapeError(const std::string& op, const Matrix& a, const Matrix& b);
};

Var matmul(Tape& t, Var a, Var b);
Var matmul_nt(Tape& t, Var a, Var b);  // a * b^T
Var add(Tape& t, Var a, Var b);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);  // elementwise
Var scale(Tape& t, Var a, double s);
Var add_row_bias(Tape& t, Var x, Var b);  // b: 1 x cols, added to every row
Var add_col_bias(Tape& t, Var x, Var b);  // b: 1 x rows, b[j] added to row j
Var transpose(Tape& t, Var x);
Var reshape(Tape& t, Var x, Eigen::Index rows, Eigen::Index cols);  // row-major
Var flatten(Tape& t, Var x);                                          // 1 x numel
Var slice_cols(Tape& t, Var x, Eigen::Index offset, Eigen::Index width);
Var concat_rows(Tape& t, std::span<const Var> parts);
Var sum(Tape& t, Var x);  // 1 x 1
Var max_all(Tape& t, Var x);  // 1 x 1, gradient routed to the first maximum

Var relu(Tape& t, Var x);
Var tanh(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
// axis 1: normalize within each row; axis 0: within each column.
Var softmax(Tape& t, Var x, int axis);

// Inverted dropout; identity in eval mode or when p == 0.
Var dropout(Tape& t, Var x, double p, Mode mode, Rng* rng);

// y = x W + b with x: n x d_in, W: d_in x d_out, b: 1 x d_out.
Var linear(Tape& t, Var x, Var w, Var b);
// 1x1 convolution: x: C_in x N, W: C_out x C_in, b: 1 x C_out -> C_out x N.
Var pointwise_conv(Tape& t, Var x, Var w, Var b);

// Batch normalization over rows (the batch axis). Train mode normalizes with
// batch statistics and updates the running buffers; eval mode uses them.
Var batch_norm(Tape& t, Var x, Parameter& gamma, Parameter& beta, Parameter& running_mean,
               Parameter& running_var, Mode mode, double momentum = 0.1, double eps = 1e-5);

// Weighted mean binary cross-entropy on logits (n x 1). Probabilities are
// clipped to [1e-7, 1 - 1e-7] for the loss value; the logit gradient is p - y.
Var bce_with_logits(Tape& t, Var logits, std::span<const double> targets,
                    std::span<const double> weights);

double bce_loss(double p, int y);
double sigmoid(double z);

// --- Optimizer ---------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Throws NumericError naming the parameter when a gradient is not finite.
void adam_step(ParameterStore& store, const AdamConfig& cfg);

// --- Weight files ------------------------------------------------------------

// "MIML" | u32 version | u32 count | per tensor: u16 name length, name bytes,
// u8 rank, u32 dims, f32 data | u32 CRC32 of all preceding bytes. Little endian.
inline constexpr std::uint32_t kWeightFormatVersion = 1;

std::string encode_weights(const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> decode_weights(const std::string& bytes);
void save_weights(const std::filesystem::path& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_weights(const std::filesystem::path& path);

}  // namespace mimil::nn
