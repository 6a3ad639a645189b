#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mimil/io.hpp"
#include "mimil/matrix.hpp"
#include "mimil/signal.hpp"

namespace mimil::explain {

// (M-1) / (C(M,s) s (M-s)) for 0 < s < M. Throws ParameterError otherwise.
double shapley_kernel_weight(int m, int s);

enum class ShapMode { Exact, Sampled };
ShapMode parse_shap_mode(std::string_view s);

struct ShapOptions {
  ShapMode mode = ShapMode::Sampled;
  int n_coalitions = 4096;
  std::uint64_t seed = 0;
};

// Value of a coalition (mask[j] != 0 means player j takes its explained value).
using CoalitionValue = std::function<double(const std::vector<char>& mask)>;

struct ShapValues {
  std::vector<double> phi;
  double base_value = 0.0;  // v(empty)
  double full_value = 0.0;  // v(all)
  std::size_t coalitions = 0;
};

// Weighted least squares over coalition indicators with sum(phi) = v(all) -
// v(empty) imposed exactly. Exact mode enumerates all 2^M - 2 coalitions
// (M <= 20); sampled mode fully enumerates the smallest coalition sizes that
// fit the budget and draws the rest in complementary pairs.
ShapValues kernel_shap(const CoalitionValue& value, int n_players, const ShapOptions& opts);

// Grid explainer: a 19 x D input, one background row, players either every
// cell or every (timestep, modality) block.
enum class Grouping { Full, Grouped };
Grouping parse_grouping(std::string_view s);

using GridPredict = std::function<double(const Matrix&)>;

struct ShapExplanation {
  std::string window_id;
  std::string participant_id;
  Matrix phi;  // 19 x D (full) or 19 x 4 (grouped)
  double base_value = 0.0;
  double predicted = 0.0;
  int true_label = 0;
  std::vector<std::string> feature_names;
  std::size_t coalitions = 0;

  io::Json to_json() const;
  static ShapExplanation from_json(const io::Json& j);
};

// Masked cells are replaced by `background` (1 x D). `feature_names` names the
// D columns; modality blocks are D/4 columns wide in grouped mode.
ShapExplanation explain_grid(const GridPredict& predict, const Matrix& x, const RowVector& background,
                             Grouping grouping, const ShapOptions& opts,
                             const std::vector<std::string>& feature_names);

struct GlobalImportance {
  Matrix grid;
  signal::Group cls = signal::Group::CWS;
  int n_windows = 0;
  io::Json to_json() const;
};

// Mean phi over correctly classified windows of `cls` (threshold 0.5).
// Throws DataError when no window qualifies.
GlobalImportance global_importance(std::span<const ShapExplanation> explanations, signal::Group cls,
                                   double threshold = 0.5);

enum class HeatmapFormat { Csv, Pgm, Json };
HeatmapFormat parse_heatmap_format(std::string_view s);

// csv: header of column names, one row per timestep. pgm: 8-bit |value|
// scaled to [0, 255] plus `<stem>_sign.csv`. json: grid and a symmetric color
// scale. Positive values push toward CWS.
void export_heatmap(const Matrix& grid, const std::filesystem::path& out, HeatmapFormat format,
                    const std::vector<std::string>& column_names);

// Parses a csv written by export_heatmap.
Matrix read_heatmap_csv(const std::filesystem::path& path);

}  // namespace mimil::explain
