#include "mimil/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "mimil/common.hpp"
#include "mimil/features.hpp"

namespace mimil::explain {

namespace {

double log_binom(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

struct Coalitions {
  std::vector<std::vector<char>> masks;
  std::vector<double> weights;
  std::map<std::string, std::size_t> index;

  void add(std::vector<char> mask, double w) {
    std::string key(mask.begin(), mask.end());
    auto [it, inserted] = index.emplace(std::move(key), masks.size());
    if (inserted) {
      masks.push_back(std::move(mask));
      weights.push_back(w);
    } else {
      weights[it->second] += w;
    }
  }
};

void enumerate_all(int m, Coalitions& c) {
  const std::uint64_t total = std::uint64_t{1} << m;
  for (std::uint64_t bits = 1; bits + 1 < total; ++bits) {
    std::vector<char> mask(static_cast<std::size_t>(m));
    int s = 0;
    for (int j = 0; j < m; ++j) {
      mask[static_cast<std::size_t>(j)] = static_cast<char>((bits >> j) & 1U);
      s += mask[static_cast<std::size_t>(j)];
    }
    c.add(std::move(mask), shapley_kernel_weight(m, s));
  }
}

// Every subset of size s, each with weight w.
void enumerate_size(int m, int s, double w, Coalitions& c) {
  std::vector<int> idx(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) idx[static_cast<std::size_t>(i)] = i;
  while (true) {
    std::vector<char> mask(static_cast<std::size_t>(m), 0);
    for (int i : idx) mask[static_cast<std::size_t>(i)] = 1;
    c.add(std::move(mask), w);
    int k = s - 1;
    while (k >= 0 && idx[static_cast<std::size_t>(k)] == m - s + k) --k;
    if (k < 0) break;
    ++idx[static_cast<std::size_t>(k)];
    for (int i = k + 1; i < s; ++i) idx[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i - 1)] + 1;
  }
}

void sample_coalitions(int m, int budget, Rng& rng, Coalitions& c) {
  const int half = m / 2;  // sizes s and m - s are handled together for s <= half
  std::vector<double> pw(static_cast<std::size_t>(half + 1), 0.0);
  double total = 0.0;
  for (int s = 1; s <= half; ++s) {
    const double w = (m - 1.0) / (static_cast<double>(s) * (m - s));
    pw[static_cast<std::size_t>(s)] = (s == m - s) ? w : 2.0 * w;
    total += pw[static_cast<std::size_t>(s)];
  }
  for (double& v : pw) v /= total;

  double remaining_budget = budget;
  double remaining_mass = 1.0;
  int next = 1;
  for (; next <= half; ++next) {
    const bool paired = next != m - next;
    const double count = std::exp(log_binom(m, next)) * (paired ? 2.0 : 1.0);
    const double share = pw[static_cast<std::size_t>(next)];
    if (remaining_budget * share / remaining_mass + 1e-9 < count) break;
    const double w = share / count;
    enumerate_size(m, next, w, c);
    if (paired) enumerate_size(m, m - next, w, c);
    remaining_budget -= count;
    remaining_mass -= share;
  }
  if (next > half || remaining_budget < 2.0) return;

  std::vector<double> cdf;
  for (int s = next; s <= half; ++s) {
    cdf.push_back((cdf.empty() ? 0.0 : cdf.back()) + pw[static_cast<std::size_t>(s)] / remaining_mass);
  }
  const int pairs = static_cast<int>(remaining_budget / 2.0);
  const double w = remaining_mass / (2.0 * pairs);
  std::vector<int> perm(static_cast<std::size_t>(m));
  for (int p = 0; p < pairs; ++p) {
    const double u = rng.uniform() * cdf.back();
    const auto pos = std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin();
    const int s = next + static_cast<int>(std::min<std::ptrdiff_t>(pos, static_cast<std::ptrdiff_t>(cdf.size()) - 1));
    // Partial Fisher-Yates draws a uniform subset of size s.
    for (int j = 0; j < m; ++j) perm[static_cast<std::size_t>(j)] = j;
    std::vector<char> mask(static_cast<std::size_t>(m), 0);
    for (int j = 0; j < s; ++j) {
      const auto k = j + static_cast<int>(rng.below(static_cast<std::uint64_t>(m - j)));
      std::swap(perm[static_cast<std::size_t>(j)], perm[static_cast<std::size_t>(k)]);
      mask[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])] = 1;
    }
    std::vector<char> comp(mask);
    for (char& b : comp) b = static_cast<char>(1 - b);
    c.add(std::move(mask), w);
    c.add(std::move(comp), w);
  }
}

// Returns false when the reduced normal equations are rank deficient.
bool solve_constrained(const Coalitions& c, const std::vector<double>& values, double base, double delta,
                       int m, std::vector<double>& phi) {
  const Eigen::Index r = m - 1;
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(r, r);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(r);
  constexpr Eigen::Index kChunk = 2048;
  const auto n = static_cast<Eigen::Index>(c.masks.size());
  for (Eigen::Index start = 0; start < n; start += kChunk) {
    const Eigen::Index len = std::min(kChunk, n - start);
    Eigen::MatrixXd a(len, r);
    Eigen::VectorXd b(len), w(len);
    for (Eigen::Index i = 0; i < len; ++i) {
      const auto& mask = c.masks[static_cast<std::size_t>(start + i)];
      const double zl = mask[static_cast<std::size_t>(m - 1)];
      for (Eigen::Index j = 0; j < r; ++j) a(i, j) = mask[static_cast<std::size_t>(j)] - zl;
      b(i) = values[static_cast<std::size_t>(start + i)] - base - zl * delta;
      w(i) = c.weights[static_cast<std::size_t>(start + i)];
    }
    const Eigen::MatrixXd wa = w.asDiagonal() * a;
    gram.noalias() += a.transpose() * wa;
    rhs.noalias() += wa.transpose() * b;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(gram);
  qr.setThreshold(1e-12);
  if (qr.rank() < r) return false;
  const Eigen::VectorXd sol = qr.solve(rhs);
  phi.assign(static_cast<std::size_t>(m), 0.0);
  double acc = 0.0;
  for (Eigen::Index j = 0; j < r; ++j) {
    phi[static_cast<std::size_t>(j)] = sol(j);
    acc += sol(j);
  }
  phi[static_cast<std::size_t>(m - 1)] = delta - acc;
  return true;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double shapley_kernel_weight(int m, int s) {
  if (m < 2 || s <= 0 || s >= m) {
    throw ParameterError("shapley_kernel_weight: need 0 < s < M (M=" + std::to_string(m) +
                         ", s=" + std::to_string(s) + "); empty and full coalitions are constraints");
  }
  return (m - 1.0) / (std::exp(log_binom(m, s)) * s * (m - s));
}

ShapMode parse_shap_mode(std::string_view s) {
  if (s == "exact") return ShapMode::Exact;
  if (s == "sampled") return ShapMode::Sampled;
  throw ParameterError("unknown shap mode '" + std::string(s) + "' (exact|sampled)");
}

Grouping parse_grouping(std::string_view s) {
  if (s == "full") return Grouping::Full;
  if (s == "grouped") return Grouping::Grouped;
  throw ParameterError("unknown explanation mode '" + std::string(s) + "' (full|grouped)");
}

HeatmapFormat parse_heatmap_format(std::string_view s) {
  if (s == "csv") return HeatmapFormat::Csv;
  if (s == "pgm") return HeatmapFormat::Pgm;
  if (s == "json") return HeatmapFormat::Json;
  throw ParameterError("unknown heatmap format '" + std::string(s) + "' (csv|pgm|json)");
}

ShapValues kernel_shap(const CoalitionValue& value, int m, const ShapOptions& opts) {
  if (m < 1) throw ParameterError("kernel_shap: need at least one player");
  ShapValues out;
  out.base_value = value(std::vector<char>(static_cast<std::size_t>(m), 0));
  out.full_value = value(std::vector<char>(static_cast<std::size_t>(m), 1));
  const double delta = out.full_value - out.base_value;
  if (m == 1) {
    out.phi = {delta};
    return out;
  }

  const bool small = m <= 20 && ((std::uint64_t{1} << m) - 2) <= static_cast<std::uint64_t>(std::max(opts.n_coalitions, 0));
  if (opts.mode == ShapMode::Exact) {
    if (m > 20) throw ParameterError("kernel_shap: exact mode needs M <= 20, got " + std::to_string(m));
  } else if (!small && opts.n_coalitions < 2 * m + 4) {
    throw ParameterError("kernel_shap: sampled mode needs n_coalitions >= 2M+4 = " +
                         std::to_string(2 * m + 4));
  }

  Rng rng(opts.seed);
  for (int attempt = 0; attempt < 2; ++attempt) {
    Coalitions c;
    if (opts.mode == ShapMode::Exact || small) {
      enumerate_all(m, c);
    } else {
      Rng r = rng.split(static_cast<std::uint64_t>(attempt));
      sample_coalitions(m, opts.n_coalitions * (attempt + 1), r, c);
    }
    std::vector<double> values;
    values.reserve(c.masks.size());
    for (const auto& mask : c.masks) values.push_back(value(mask));
    if (solve_constrained(c, values, out.base_value, delta, m, out.phi)) {
      out.coalitions = c.masks.size();
      return out;
    }
    if (opts.mode == ShapMode::Exact || small) break;
  }
  throw NumericError("kernel_shap: singular regression system with " + std::to_string(m) + " players");
}

ShapExplanation explain_grid(const GridPredict& predict, const Matrix& x, const RowVector& background,
                             Grouping grouping, const ShapOptions& opts,
                             const std::vector<std::string>& feature_names) {
  const Eigen::Index rows = x.rows();
  const Eigen::Index cols = x.cols();
  if (background.size() != cols) {
    throw ParameterError("explain: background has " + std::to_string(background.size()) +
                         " columns, input has " + std::to_string(cols));
  }
  if (static_cast<Eigen::Index>(feature_names.size()) != cols) {
    throw ParameterError("explain: need one feature name per column");
  }
  Eigen::Index group_w = 1;
  Eigen::Index groups_per_row = cols;
  ShapExplanation ex;
  if (grouping == Grouping::Grouped) {
    if (cols % features::kNumModalities != 0) throw ParameterError("explain: columns not divisible by 4");
    group_w = cols / features::kNumModalities;
    groups_per_row = features::kNumModalities;
    for (features::Modality m : features::kModalities) ex.feature_names.emplace_back(features::to_string(m));
  } else {
    ex.feature_names = feature_names;
  }
  const int players = static_cast<int>(rows * groups_per_row);

  Matrix bg(rows, cols);
  bg.rowwise() = background;
  Matrix z(rows, cols);
  const CoalitionValue value = [&](const std::vector<char>& mask) {
    z = bg;
    for (int p = 0; p < players; ++p) {
      if (!mask[static_cast<std::size_t>(p)]) continue;
      const Eigen::Index r = p / groups_per_row;
      const Eigen::Index c0 = (p % groups_per_row) * group_w;
      z.block(r, c0, 1, group_w) = x.block(r, c0, 1, group_w);
    }
    return predict(z);
  };
  const ShapValues sv = kernel_shap(value, players, opts);
  ex.phi = Eigen::Map<const Matrix>(sv.phi.data(), rows, groups_per_row);
  ex.base_value = sv.base_value;
  ex.predicted = sv.full_value;
  ex.coalitions = sv.coalitions;
  return ex;
}

io::Json ShapExplanation::to_json() const {
  std::vector<double> flat(phi.data(), phi.data() + phi.size());
  return {{"window_id", window_id},
          {"participant_id", participant_id},
          {"base_value", base_value},
          {"predicted", predicted},
          {"true_label", true_label},
          {"phi", flat},
          {"n_rows", phi.rows()},
          {"n_cols", phi.cols()},
          {"feature_names", feature_names},
          {"coalitions", coalitions},
          {"explained_output", "P(CWS)"},
          {"background", "training-split feature means"}};
}

ShapExplanation ShapExplanation::from_json(const io::Json& j) {
  ShapExplanation e;
  try {
    e.window_id = j.at("window_id").get<std::string>();
    e.participant_id = j.at("participant_id").get<std::string>();
    e.base_value = j.at("base_value").get<double>();
    e.predicted = j.at("predicted").get<double>();
    e.true_label = j.at("true_label").get<int>();
    const auto flat = j.at("phi").get<std::vector<double>>();
    const auto r = j.at("n_rows").get<Eigen::Index>();
    const auto c = j.at("n_cols").get<Eigen::Index>();
    if (static_cast<std::size_t>(r * c) != flat.size()) throw DataError("explanation: phi length mismatch");
    e.phi = Eigen::Map<const Matrix>(flat.data(), r, c);
    e.feature_names = j.at("feature_names").get<std::vector<std::string>>();
    e.coalitions = j.value("coalitions", std::size_t{0});
  } catch (const io::Json::exception& ex) {
    throw DataError(std::string("explanation: ") + ex.what());
  }
  return e;
}

io::Json GlobalImportance::to_json() const {
  std::vector<double> flat(grid.data(), grid.data() + grid.size());
  return {{"class", std::string(signal::to_string(cls))},
          {"n_windows", n_windows},
          {"grid", flat},
          {"n_rows", grid.rows()},
          {"n_cols", grid.cols()}};
}

GlobalImportance global_importance(std::span<const ShapExplanation> explanations, signal::Group cls,
                                   double threshold) {
  const int want = signal::group_label(cls);
  GlobalImportance g;
  g.cls = cls;
  for (const auto& e : explanations) {
    const int pred = e.predicted >= threshold ? 1 : 0;
    if (e.true_label != want || pred != want) continue;
    if (g.n_windows == 0) {
      g.grid = Matrix::Zero(e.phi.rows(), e.phi.cols());
    } else if (e.phi.rows() != g.grid.rows() || e.phi.cols() != g.grid.cols()) {
      throw ParameterError("global_importance: explanations have different grid shapes");
    }
    g.grid += e.phi;
    ++g.n_windows;
  }
  if (g.n_windows == 0) {
    throw DataError("global_importance: no correctly classified " + std::string(signal::to_string(cls)) +
                    " windows");
  }
  g.grid /= static_cast<double>(g.n_windows);
  return g;
}

void export_heatmap(const Matrix& grid, const std::filesystem::path& out, HeatmapFormat format,
                    const std::vector<std::string>& column_names) {
  if (!grid.allFinite()) throw ParameterError("export_heatmap: grid has non-finite values");
  if (static_cast<Eigen::Index>(column_names.size()) != grid.cols()) {
    throw ParameterError("export_heatmap: need one column name per grid column");
  }
  const double vmax = grid.size() > 0 ? grid.cwiseAbs().maxCoeff() : 0.0;
  switch (format) {
    case HeatmapFormat::Csv: {
      std::string text;
      for (std::size_t j = 0; j < column_names.size(); ++j) text += (j ? "," : "") + column_names[j];
      text += '\n';
      for (Eigen::Index r = 0; r < grid.rows(); ++r) {
        for (Eigen::Index c = 0; c < grid.cols(); ++c) text += (c ? "," : "") + format_double(grid(r, c));
        text += '\n';
      }
      io::write_text(out, text);
      break;
    }
    case HeatmapFormat::Pgm: {
      std::string img = "P5\n" + std::to_string(grid.cols()) + " " + std::to_string(grid.rows()) + "\n255\n";
      std::string sign;
      for (std::size_t j = 0; j < column_names.size(); ++j) sign += (j ? "," : "") + column_names[j];
      sign += '\n';
      for (Eigen::Index r = 0; r < grid.rows(); ++r) {
        for (Eigen::Index c = 0; c < grid.cols(); ++c) {
          const double v = grid(r, c);
          const double level = vmax > 0.0 ? std::round(255.0 * std::abs(v) / vmax) : 0.0;
          img.push_back(static_cast<char>(static_cast<unsigned char>(level)));
          sign += (c ? "," : "");
          sign += v > 0.0 ? "1" : (v < 0.0 ? "-1" : "0");
        }
        sign += '\n';
      }
      io::write_text(out, img);
      std::filesystem::path sp = out;
      sp.replace_filename(out.stem().string() + "_sign.csv");
      io::write_text(sp, sign);
      break;
    }
    case HeatmapFormat::Json: {
      std::vector<double> flat(grid.data(), grid.data() + grid.size());
      io::Json j = {{"grid", flat},
                    {"n_rows", grid.rows()},
                    {"n_cols", grid.cols()},
                    {"feature_names", column_names},
                    {"scale", {{"min", -vmax}, {"max", vmax}}},
                    {"colors", {{"positive", "red"}, {"negative", "blue"}}},
                    {"sign_convention", "positive values push toward CWS, negative toward CWNS"}};
      io::write_json(out, j);
      break;
    }
  }
}

Matrix read_heatmap_csv(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty heatmap");
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) return Matrix(0, 0);
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw DataError(path.string() + ": ragged heatmap rows");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

}  // namespace mimil::explain
