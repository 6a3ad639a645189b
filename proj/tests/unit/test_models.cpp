#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "mimil/models.hpp"
#include "support/gradcheck.hpp"

using namespace mimil;
using namespace mimil::models;
using features::FeatureMode;
using nn::Mode;
using nn::Tape;
using nn::Var;
using testsupport::random_matrix;

namespace {

Matrix permute_rows(const Matrix& x, const std::vector<int>& perm) {
  Matrix y(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) y.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  return y;
}

std::vector<int> random_perm(Rng& rng, int n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  rng.shuffle(p);
  return p;
}

std::unique_ptr<Classifier> fitted(ModelKind kind, FeatureMode mode, std::uint64_t seed, bool tiny = false) {
  ModelSpec spec = tiny ? ModelSpec::tiny(kind, mode) : ModelSpec{};
  spec.kind = kind;
  spec.mode = mode;
  Rng rng(seed);
  auto model = make_classifier(spec, rng);
  auto bags = testsupport::random_bags(rng, mode, 8);
  model->standardizer().fit(bags);
  return model;
}

}  // namespace

TEST_CASE("model gradients over 20 seeds") {
  for (auto kind : {ModelKind::Mimil, ModelKind::AttnMil, ModelKind::InstMax, ModelKind::Dnn}) {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const double err = testsupport::model_gradcheck(kind, 500 + s);
      INFO(to_string(kind) << " seed " << s << " rel err " << err);
      CHECK(err < 1e-3);
    }
  }
}

TEST_CASE("attention pool hand computation") {
  Tape t(false);
  Matrix e(2, 1);
  e << 0.0, 10.0;
  const PoolResult pr = attention_pool(t, t.constant(e), t.constant(Matrix::Ones(1, 1)), t.constant(Matrix::Ones(1, 1)));
  const double s1 = std::tanh(10.0);
  const double a1 = std::exp(s1) / (1.0 + std::exp(s1));
  CHECK(t.value(pr.attention)(0, 0) == doctest::Approx(1.0 - a1).epsilon(1e-12));
  CHECK(t.value(pr.attention)(1, 0) == doctest::Approx(a1).epsilon(1e-12));
  CHECK(t.value(pr.attention)(0, 0) == doctest::Approx(0.2690).epsilon(1e-3));
  CHECK(t.value(pr.pooled)(0, 0) == doctest::Approx(7.310).epsilon(1e-3));

  Matrix one(1, 3);
  one << 1, 2, 3;
  Rng rng(1);
  const PoolResult single = attention_pool(t, t.constant(one), t.constant(random_matrix(rng, 4, 1)),
                                           t.constant(random_matrix(rng, 4, 3)));
  CHECK(t.value(single.attention)(0, 0) == doctest::Approx(1.0));
  CHECK(t.value(single.pooled).isApprox(one));

  const Matrix same = Matrix::Ones(19, 1) * random_matrix(rng, 1, 5);
  const PoolResult uni = attention_pool(t, t.constant(same), t.constant(random_matrix(rng, 3, 1)),
                                        t.constant(random_matrix(rng, 3, 5)));
  for (int i = 0; i < 19; ++i) CHECK(t.value(uni.attention)(i, 0) == doctest::Approx(1.0 / 19.0));
  CHECK(t.value(uni.pooled).isApprox(same.row(0)));
}

TEST_CASE("modality fusion matches a direct double-loop evaluation") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 3;
    const Matrix x = random_matrix(rng, 4, n);
    const Matrix wt = random_matrix(rng, 2, 4), wp = random_matrix(rng, 2, 4), wg = random_matrix(rng, 2, 4);
    const Matrix bt = random_matrix(rng, 1, 2), bp = random_matrix(rng, 1, 2), bg = random_matrix(rng, 1, 2);
    Tape t(false);
    const FusionVars fv{t.constant(wt), t.constant(bt), t.constant(wp), t.constant(bp), t.constant(wg), t.constant(bg)};
    const Matrix z = t.value(modality_fusion(t, t.constant(x), fv));
    REQUIRE(z.rows() == 2);
    REQUIRE(z.cols() == n);
    auto conv = [&](const Matrix& w, const Matrix& b, int c, int pos) {
      double s = b(0, c);
      for (int k = 0; k < 4; ++k) s += w(c, k) * x(k, pos);
      return s;
    };
    for (int i = 0; i < n; ++i) {
      std::vector<double> logits(n);
      for (int j = 0; j < n; ++j) {
        double s = 0.0;
        for (int c = 0; c < 2; ++c) s += conv(wt, bt, c, i) * conv(wp, bp, c, j);
        logits[j] = s;
      }
      const double mx = *std::max_element(logits.begin(), logits.end());
      double den = 0.0;
      for (double v : logits) den += std::exp(v - mx);
      for (int c = 0; c < 2; ++c) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += std::exp(logits[j] - mx) / den * conv(wg, bg, c, j);
        CHECK(z(c, i) == doctest::Approx(acc).epsilon(1e-6));
      }
    }
    const FusionVars zero{t.constant(Matrix::Zero(2, 4)), t.constant(Matrix::Zero(1, 2)),
                          t.constant(Matrix::Zero(2, 4)), t.constant(Matrix::Zero(1, 2)), t.constant(wg),
                          t.constant(bg)};
    const Matrix zu = t.value(modality_fusion(t, t.constant(x), zero));
    for (int c = 0; c < 2; ++c) {
      double mean = 0.0;
      for (int j = 0; j < n; ++j) mean += conv(wg, bg, c, j) / n;
      for (int i = 0; i < n; ++i) CHECK(zu(c, i) == doctest::Approx(mean));
    }
  }
}

TEST_CASE("mimil output shapes, attention sums and eval determinism") {
  auto model = fitted(ModelKind::Mimil, FeatureMode::Raw, 3);
  auto& mm = dynamic_cast<MimilModel&>(*model);
  Rng rng(4);
  const Matrix x = random_matrix(rng, 19, 24);
  const MimilOutput out = mm.forward(x);
  CHECK(out.bag_embeddings.rows() == 4);
  CHECK(out.bag_embeddings.cols() == 256);
  for (const auto& a : out.attention) {
    REQUIRE(a.size() == 19);
    double s = 0.0;
    for (double v : a) s += v;
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
  CHECK(out.probability > 0.0);
  CHECK(out.probability < 1.0);
  CHECK(mm.forward(x).probability == out.probability);
  CHECK(model->infer(x).attention.size() == 4);
}

TEST_CASE("instance embedding is a per-row map") {
  Rng rng(5);
  ModelSpec spec;
  auto model = make_classifier(spec, rng);
  auto& p = model->params();
  Tape t(false);
  const Matrix x = random_matrix(rng, 19, 6);
  const EmbeddingVars ev{t.param(p.get("emb.HR.l1.w")), t.param(p.get("emb.HR.l1.b")),
                         t.param(p.get("emb.HR.l2.w")), t.param(p.get("emb.HR.l2.b"))};
  const Matrix e = t.value(embed_modality(t, t.constant(x), ev, 0.0, Mode::Eval, nullptr));
  CHECK(e.rows() == 19);
  CHECK(e.cols() == 256);
  const auto perm = random_perm(rng, 19);
  const Matrix ep = t.value(embed_modality(t, t.constant(permute_rows(x, perm)), ev, 0.0, Mode::Eval, nullptr));
  CHECK(ep.isApprox(permute_rows(e, perm)));
}

TEST_CASE("MIL models are permutation invariant, the DNN is not") {
  Rng rng(6);
  for (auto kind : {ModelKind::Mimil, ModelKind::AttnMil, ModelKind::InstMax}) {
    auto model = fitted(kind, FeatureMode::Change, 10);
    for (int trial = 0; trial < 10; ++trial) {
      const Matrix x = random_matrix(rng, 19, 8);
      const double p0 = model->predict(x);
      const double p1 = model->predict(permute_rows(x, random_perm(rng, 19)));
      CHECK(std::abs(p0 - p1) < 1e-6);
    }
  }
  auto dnn = fitted(ModelKind::Dnn, FeatureMode::Change, 10);
  const Matrix x = random_matrix(rng, 19, 8);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    worst = std::max(worst, std::abs(dnn->predict(x) - dnn->predict(permute_rows(x, random_perm(rng, 19)))));
  }
  CHECK(worst > 1e-3);
}

TEST_CASE("zero weights give probability one half; final bias is monotone") {
  for (auto kind : {ModelKind::Mimil, ModelKind::Dnn}) {
    auto model = fitted(kind, FeatureMode::Raw, 2, true);
    for (nn::Parameter* p : model->params().all()) {
      if (p->trainable) p->value.setZero();
    }
    Rng rng(1);
    CHECK(model->predict(random_matrix(rng, 19, 24)) == doctest::Approx(0.5));
  }
  auto model = fitted(ModelKind::Mimil, FeatureMode::Raw, 2, true);
  Rng rng(2);
  const Matrix x = random_matrix(rng, 19, 24);
  const double before = model->predict(x);
  model->params().get("cls.l3.b").value(0, 0) += 0.5;
  CHECK(model->predict(x) > before);
}

TEST_CASE("instance max") {
  const std::vector<double> flat(19, 0.1);
  CHECK(instance_max_predict(flat) == doctest::Approx(0.1));
  std::vector<double> s = {0.1, 0.2, 0.9, 0.3};
  CHECK(instance_max_predict(s) == 0.9);
  Rng rng(3);
  auto model = fitted(ModelKind::InstMax, FeatureMode::Change, 4);
  auto& im = dynamic_cast<InstMaxModel&>(*model);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_matrix(rng, 19, 8);
    const auto scores = im.instance_scores(model->standardizer().apply(x));
    const double bag = model->predict(x);
    for (double v : scores) CHECK(bag >= v - 1e-12);
  }
}

TEST_CASE("input validation names the expected shape") {
  auto model = fitted(ModelKind::Mimil, FeatureMode::Change, 1, true);
  CHECK_THROWS_AS(model->predict(Matrix::Zero(18, 8)), DataError);
  CHECK_THROWS_AS(model->predict(Matrix::Zero(19, 24)), DataError);
}

TEST_CASE("standardizer: population scale and constant columns") {
  Rng rng(9);
  auto bags = testsupport::random_bags(rng, FeatureMode::Change, 5);
  for (auto& b : bags) b.features.col(3).setConstant(2.0);
  Standardizer z;
  z.fit(bags);
  CHECK(z.scale(3) == 1.0);
  Matrix all(5 * 19, 8);
  for (int i = 0; i < 5; ++i) all.middleRows(i * 19, 19) = bags[static_cast<std::size_t>(i)].features;
  const Matrix s = z.apply(all);
  for (int c = 0; c < 8; ++c) {
    if (c == 3) continue;
    CHECK(std::abs(s.col(c).mean()) < 1e-9);
    CHECK(std::sqrt(s.col(c).array().square().mean()) == doctest::Approx(1.0));
  }
  const Standardizer back = Standardizer::from_json(z.to_json());
  CHECK(back.mean == z.mean);
  CHECK(back.scale == z.scale);
}

TEST_CASE("model save and load round-trip bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "mimil_models_rt";
  std::filesystem::create_directories(dir);
  for (auto kind : {ModelKind::Mimil, ModelKind::AttnMil, ModelKind::InstMax, ModelKind::Dnn}) {
    auto model = fitted(kind, FeatureMode::Change, 7, true);
    const auto art = save_model(*model, dir / std::string(to_string(kind)), {{"note", "x"}});
    auto back = load_model(art.weights);
    CHECK(back->kind() == kind);
    const auto a = model->params().to_tensors();
    const auto b = back->params().to_tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(a[i].first == b[i].first);
      CHECK(a[i].second.data == b[i].second.data);
    }
    Rng rng(2);
    const Matrix x = random_matrix(rng, 19, 8);
    CHECK(back->predict(x) == model->predict(x));
    save_model(*back, dir / "again");
    CHECK(io::read_text(dir / "again.miml") == io::read_text(art.weights));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("model spec json") {
  ModelSpec s;
  s.kind = ModelKind::AttnMil;
  s.embed_dim = 32;
  const ModelSpec back = ModelSpec::from_json(s.to_json());
  CHECK(back.kind == ModelKind::AttnMil);
  CHECK(back.embed_dim == 32);
  io::Json j = s.to_json();
  j["bogus"] = 1;
  CHECK_THROWS_AS(ModelSpec::from_json(j), ConfigError);
  CHECK_THROWS_AS(parse_model_kind("svm"), ParameterError);
}

TEST_CASE("ridge: closed form, penalty dominance, planted feature") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix x = random_matrix(rng, 40, 6);
    std::vector<int> y(40);
    for (auto& v : y) v = int(rng.below(2));
    const double lambda = rng.uniform(0.1, 5.0);
    const ColVector beta = ridge_coefficients(x, y, lambda);
    ColVector t(40);
    for (int i = 0; i < 40; ++i) t(i) = 2.0 * y[static_cast<std::size_t>(i)] - 1.0;
    const Matrix inv = (x.transpose() * x + lambda * Matrix::Identity(6, 6)).inverse();
    const ColVector oracle = inv * x.transpose() * t;
    CHECK((beta - oracle).cwiseAbs().maxCoeff() < 1e-8);
  }
  const Matrix x = random_matrix(rng, 30, 5);
  std::vector<int> y(30, 1);
  CHECK(ridge_coefficients(x, y, 1e9).cwiseAbs().maxCoeff() < 1e-6);
  CHECK_THROWS_AS(ridge_coefficients(x, y, 0.0), ParameterError);

  const int n = 200;
  Matrix xp = random_matrix(rng, n, 5);
  std::vector<int> yp(n);
  for (int i = 0; i < n; ++i) {
    yp[static_cast<std::size_t>(i)] = int(rng.below(2));
    xp(i, 3) = 2.0 * yp[static_cast<std::size_t>(i)] - 1.0 + 1e-3 * rng.normal();
  }
  const auto ranked = ridge_rank(xp, yp, 1.0);
  CHECK(ranked.front().index == 3);
  CHECK(ranked.front().coefficient == doctest::Approx(double(n) / (n + 1.0)).epsilon(0.02));
  for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].coefficient >= ranked[i].coefficient);
}
