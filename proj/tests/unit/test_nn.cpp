#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "mimil/nn.hpp"
#include "support/gradcheck.hpp"

using namespace mimil;
using namespace mimil::nn;
using testsupport::random_matrix;

TEST_CASE("op-level gradients match central differences over 20 seeds") {
  for (const auto& op : testsupport::op_cases()) {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const double err = op.run(1000 + s);
      INFO(op.name << " seed " << s << " rel err " << err);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("linear layer arithmetic") {
  Tape t(false);
  Matrix x(1, 2);
  x << 1, 2;
  const Var y = linear(t, t.constant(x), t.constant(Matrix::Identity(2, 2)), t.constant(Matrix::Ones(1, 2)));
  CHECK(t.value(y)(0, 0) == 2.0);
  CHECK(t.value(y)(0, 1) == 3.0);
  const Var id = linear(t, t.constant(x), t.constant(Matrix::Identity(2, 2)), t.constant(Matrix::Zero(1, 2)));
  CHECK(t.value(id) == x);
}

TEST_CASE("pointwise conv identity and position independence") {
  Tape t(false);
  Rng rng(1);
  const Matrix x = random_matrix(rng, 3, 5);
  const Var y = pointwise_conv(t, t.constant(x), t.constant(Matrix::Identity(3, 3)), t.constant(Matrix::Zero(1, 3)));
  CHECK(t.value(y).isApprox(x));
  Matrix c(3, 5);
  for (int j = 0; j < 5; ++j) c.col(j) << 1.0, -2.0, 0.5;
  const Var yc = pointwise_conv(t, t.constant(c), t.constant(random_matrix(rng, 2, 3)), t.constant(random_matrix(rng, 1, 2)));
  for (int j = 1; j < 5; ++j) CHECK(t.value(yc).col(j).isApprox(t.value(yc).col(0)));
}

TEST_CASE("softmax and sigmoid basics") {
  Tape t(false);
  const Var s = softmax(t, t.constant(Matrix::Zero(1, 3)), 1);
  for (int j = 0; j < 3; ++j) CHECK(t.value(s)(0, j) == doctest::Approx(1.0 / 3.0));
  CHECK(sigmoid(0.0) == 0.5);
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix x = random_matrix(rng, 4, 7, 5.0);
    const Var a = softmax(t, t.constant(x), 1);
    const Var b = softmax(t, t.constant((x.array() + rng.uniform(-50, 50)).matrix()), 1);
    CHECK((t.value(a) - t.value(b)).cwiseAbs().maxCoeff() < 1e-9);
    for (int r = 0; r < 4; ++r) CHECK(t.value(a).row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Matrix big = Matrix::Constant(2, 2, 800.0);
  CHECK(t.value(softmax(t, t.constant(big), 0)).allFinite());
}

TEST_CASE("dropout modes and rates") {
  Rng rng(3);
  const Matrix x = random_matrix(rng, 200, 100);
  Tape t(false);
  CHECK(t.value(dropout(t, t.constant(x), 0.5, Mode::Eval, &rng)) == x);
  CHECK(t.value(dropout(t, t.constant(x), 0.0, Mode::Train, &rng)) == x);
  const Matrix ones = Matrix::Ones(200, 100);
  const Matrix y = t.value(dropout(t, t.constant(ones), 0.1, Mode::Train, &rng));
  const double survivors = double((y.array() != 0.0).count()) / double(y.size());
  CHECK(survivors == doctest::Approx(0.9).epsilon(0.02 / 0.9));
  CHECK(y.mean() == doctest::Approx(1.0).epsilon(0.03));
  CHECK_THROWS_AS(dropout(t, t.constant(ones), 1.0, Mode::Train, &rng), ParameterError);
}

TEST_CASE("binary cross-entropy values and logit gradient") {
  CHECK(bce_loss(0.5, 1) == doctest::Approx(std::log(2.0)));
  CHECK(bce_loss(0.5, 0) == doctest::Approx(0.6931471805599453));
  CHECK(bce_loss(1.0, 1) <= 1e-6);
  CHECK(bce_loss(0.0, 0) <= 1e-6);
  CHECK(std::isfinite(bce_loss(0.0, 1)));
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    Parameter z = testsupport::make_param("z", random_matrix(rng, 5, 1, 3.0));
    std::vector<double> y(5), w(5, 1.0);
    for (auto& v : y) v = double(rng.below(2));
    Tape t;
    t.backward(bce_with_logits(t, t.param(z), y, w));
    for (int i = 0; i < 5; ++i) CHECK(z.grad(i, 0) == doctest::Approx((sigmoid(z.value(i, 0)) - y[i]) / 5.0).epsilon(1e-9));
  }
}

TEST_CASE("adam: zero gradient, descent direction and a quadratic bowl") {
  ParameterStore store;
  Matrix w0(1, 2);
  w0 << 1.0, 1.0;
  store.add("w", w0, {2});
  store.zero_grad();
  adam_step(store, {});
  CHECK(store.get("w").value == w0);

  for (int step = 0; step < 5; ++step) {
    store.get("w").grad = Matrix::Constant(1, 2, 0.3);
    adam_step(store, {});
  }
  CHECK(store.get("w").value(0, 0) < 1.0);

  ParameterStore bowl;
  bowl.add("w", w0, {2});
  AdamConfig cfg;
  cfg.lr = 1e-2;
  double prev = 2.0;
  for (int step = 0; step < 100; ++step) {
    Parameter& p = bowl.get("w");
    p.grad = 2.0 * p.value;
    adam_step(bowl, cfg);
    const double loss = p.value.squaredNorm();
    CHECK(loss < prev);
    prev = loss;
  }
  bowl.get("w").grad(0, 0) = std::nan("");
  CHECK_THROWS_AS(adam_step(bowl, cfg), NumericError);
}

TEST_CASE("parameters are stored at float precision") {
  ParameterStore store;
  Matrix v(1, 1);
  v(0, 0) = 0.1;
  store.add("x", v, {1});
  CHECK(store.get("x").value(0, 0) == double(0.1f));
  CHECK_THROWS_AS(store.add("x", v, {1}), ParameterError);
}

TEST_CASE("weight files round-trip bit-exactly and detect corruption") {
  Rng rng(12);
  std::vector<std::pair<std::string, Tensor>> tensors;
  tensors.push_back({"a.w", Tensor::from_matrix(random_matrix(rng, 3, 4), {3, 4})});
  tensors.push_back({"a.b", Tensor::from_matrix(random_matrix(rng, 1, 4), {4})});
  const std::string bytes = encode_weights(tensors);
  CHECK(bytes.substr(0, 4) == "MIML");
  const auto back = decode_weights(bytes);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].first == tensors[i].first);
    CHECK(back[i].second.shape == tensors[i].second.shape);
    CHECK(std::memcmp(back[i].second.data.data(), tensors[i].second.data.data(),
                      tensors[i].second.data.size() * sizeof(float)) == 0);
  }
  CHECK(encode_weights(back) == bytes);
  std::string bad = bytes;
  bad[bad.size() / 2] ^= 0x40;
  CHECK_THROWS_AS(decode_weights(bad), DataError);
  CHECK_THROWS_AS(decode_weights(bytes.substr(0, bytes.size() - 3)), DataError);
  std::string magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(decode_weights(magic), DataError);

  const auto path = std::filesystem::temp_directory_path() / "mimil_nn_roundtrip.miml";
  save_weights(path, tensors);
  CHECK(encode_weights(load_weights(path)) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("shape errors name both operands") {
  Tape t(false);
  try {
    matmul(t, t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3)));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
  }
}
