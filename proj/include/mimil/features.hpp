#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mimil/matrix.hpp"
#include "mimil/signal.hpp"

namespace mimil::features {

// Canonical modality order of the feature index table: HR, EDA, RSP amplitude,
// RSP rate. Columns of every feature grid follow this order.
enum class Modality { HR = 0, EDA = 1, RSP_AMP = 2, RSP_RATE = 3 };
inline constexpr std::array<Modality, 4> kModalities = {Modality::HR, Modality::EDA,
                                                        Modality::RSP_AMP, Modality::RSP_RATE};
inline constexpr int kNumModalities = 4;
inline constexpr int kNumHld = 6;
inline constexpr int kNumSegments = 19;
inline constexpr int kRawCols = kNumModalities * kNumHld;  // 24
inline constexpr int kChangeCols = kNumModalities * 2;     // 8

std::string_view to_string(Modality m);
Modality parse_modality(std::string_view s);

enum class FeatureMode { Raw, Change, Delta };
std::string_view to_string(FeatureMode m);
FeatureMode parse_feature_mode(std::string_view s);
int num_columns(FeatureMode m);
// Columns of modality m: [offset, offset + width).
int modality_offset(FeatureMode mode, Modality m);
int modality_width(FeatureMode mode);
std::vector<std::string> feature_names(FeatureMode mode);

// --- LLD extraction --------------------------------------------------------

struct PeakDetection {
  std::vector<std::size_t> peaks;
  // k is listed when peaks[k] -> peaks[k+1] exceeds the 2 s physiological bound.
  std::vector<std::size_t> long_intervals;
};

// Pan-Tompkins-style detector: smoothing, derivative, squaring, moving-window
// integration, adaptive threshold at half the rolling 2 s maximum, 250 ms
// refractory period, then refinement to the local ECG maximum.
PeakDetection detect_r_peaks(std::span<const double> ecg, double sample_rate_hz);

// Instantaneous heart rate 60/RR held over each RR interval and extended to the
// ends. Throws DataError with fewer than two peaks.
std::vector<double> hr_series(std::span<const std::size_t> peaks, double sample_rate_hz,
                              std::size_t out_len);

struct RespiratorySeries {
  std::vector<double> rate;  // breaths per minute
  std::vector<double> amp;   // peak minus preceding trough
};

// Throws DataError when no full breath cycle is present.
RespiratorySeries rsp_rate_amp(std::span<const double> rsp, double sample_rate_hz);

struct LldSeries {
  std::vector<double> hr;
  std::vector<double> eda;
  std::vector<double> rsp_amp;
  std::vector<double> rsp_rate;
  // Samples inside an RR interval longer than 2 s (missed beats).
  std::vector<bool> hr_gap;
};

LldSeries extract_llds(const signal::Window& window);

// --- HLDs ------------------------------------------------------------------

struct HldVector {
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double median = 0.0;
  double var = 0.0;  // population variance
  double std = 0.0;

  std::array<double, 6> to_array() const { return {mean, min, max, median, var, std}; }
  static HldVector from_array(std::span<const double> a);
};

HldVector hld(std::span<const double> series);

struct RawFeatureMatrix {
  Matrix grid;  // kNumSegments x kRawCols
};

RawFeatureMatrix raw_features(const signal::Window& window);

// --- Change scores -----------------------------------------------------------

struct BaselineScore {
  std::string participant_id;
  std::array<HldVector, kNumModalities> per_modality;
  std::size_t n_segments = 0;
};

// Mean HLD vector per modality over all segments of the baseline windows.
BaselineScore baseline_score(const std::string& participant_id,
                             std::span<const RawFeatureMatrix> baseline_windows);

struct ChangeScore {
  double euclid = 0.0;
  double cosine = 0.0;
  bool degenerate = false;  // a zero-norm operand; cosine reported as 0
};

ChangeScore change_score(const HldVector& post, const HldVector& baseline);

struct ChangeScoreMatrix {
  Matrix grid;  // kNumSegments x kChangeCols
};

ChangeScoreMatrix change_score_matrix(const signal::Window& window, const BaselineScore& baseline);
ChangeScoreMatrix change_scores_from_raw(const RawFeatureMatrix& raw, const BaselineScore& baseline);

std::array<double, 6> delta_change_score(const HldVector& post, const HldVector& baseline);
// Elementwise raw - baseline mean over all 24 columns.
Matrix delta_from_raw(const RawFeatureMatrix& raw, const BaselineScore& baseline);

// Builds the model input grid of the requested mode. `baseline` may be null
// for raw mode only.
Matrix featurize(const RawFeatureMatrix& raw, FeatureMode mode, const BaselineScore* baseline);

}  // namespace mimil::features
