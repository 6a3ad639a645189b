#include "mimil/features.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>

#include "mimil/common.hpp"

namespace mimil::features {

namespace {

constexpr double kMinRrS = 0.25;
constexpr double kMaxRrS = 2.0;

// Centered moving average with a (2*half+1)-sample window, shrinking at edges.
std::vector<double> moving_average(std::span<const double> x, std::size_t half) {
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n, i + half + 1);
    out[i] = (prefix[hi] - prefix[lo]) / static_cast<double>(hi - lo);
  }
  return out;
}

std::vector<double> rolling_max_centered(std::span<const double> x, std::size_t half) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  std::deque<std::size_t> dq;
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t hi = std::min(n, i + half + 1);
    while (next < hi) {
      while (!dq.empty() && x[dq.back()] <= x[next]) dq.pop_back();
      dq.push_back(next++);
    }
    const std::size_t lo = i >= half ? i - half : 0;
    while (dq.front() < lo) dq.pop_front();
    out[i] = x[dq.front()];
  }
  return out;
}

std::size_t samples(double seconds, double fs) {
  return static_cast<std::size_t>(std::max(1.0, std::round(seconds * fs)));
}

// Sample-and-hold of per-interval values: value[k] covers [marks[k], marks[k+1]),
// extended backwards to 0 and forwards to out_len.
std::vector<double> hold_intervals(std::span<const std::size_t> marks,
                                   std::span<const double> values, std::size_t out_len) {
  std::vector<double> out(out_len, values.front());
  for (std::size_t k = 0; k < values.size(); ++k) {
    const std::size_t begin = std::min(marks[k], out_len);
    const std::size_t end =
        k + 1 < values.size() ? std::min(marks[k + 1], out_len) : out_len;
    std::fill(out.begin() + static_cast<std::ptrdiff_t>(begin),
              out.begin() + static_cast<std::ptrdiff_t>(end), values[k]);
  }
  return out;
}

}  // namespace

std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::HR: return "HR";
    case Modality::EDA: return "EDA";
    case Modality::RSP_AMP: return "RSP_AMP";
    case Modality::RSP_RATE: return "RSP_RATE";
  }
  return "?";
}

Modality parse_modality(std::string_view s) {
  for (Modality m : kModalities) {
    if (to_string(m) == s) return m;
  }
  throw ParameterError("unknown modality '" + std::string(s) + "'");
}

std::string_view to_string(FeatureMode m) {
  switch (m) {
    case FeatureMode::Raw: return "raw";
    case FeatureMode::Change: return "change";
    case FeatureMode::Delta: return "delta";
  }
  return "?";
}

FeatureMode parse_feature_mode(std::string_view s) {
  if (s == "raw") return FeatureMode::Raw;
  if (s == "change") return FeatureMode::Change;
  if (s == "delta") return FeatureMode::Delta;
  throw ParameterError("unknown feature mode '" + std::string(s) + "' (raw|change|delta)");
}

int num_columns(FeatureMode m) { return m == FeatureMode::Change ? kChangeCols : kRawCols; }

int modality_width(FeatureMode mode) { return mode == FeatureMode::Change ? 2 : kNumHld; }

int modality_offset(FeatureMode mode, Modality m) {
  return static_cast<int>(m) * modality_width(mode);
}

std::vector<std::string> feature_names(FeatureMode mode) {
  static const char* kMod[] = {"HR", "EDA", "RSP_amp", "RSP_rate"};
  static const char* kHld[] = {"mean", "min", "max", "median", "var", "std"};
  std::vector<std::string> out;
  for (int m = 0; m < kNumModalities; ++m) {
    if (mode == FeatureMode::Change) {
      out.push_back(std::string(kMod[m]) + "_cos");
      out.push_back(std::string(kMod[m]) + "_euclid");
    } else {
      const std::string prefix = mode == FeatureMode::Delta ? "d_" : "";
      for (const char* h : kHld) out.push_back(prefix + kMod[m] + "_" + h);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// R peaks and heart rate

PeakDetection detect_r_peaks(std::span<const double> ecg, double fs) {
  if (!(fs > 0.0)) throw ParameterError("detect_r_peaks: sample rate must be positive");
  PeakDetection out;
  const std::size_t n = ecg.size();
  if (n < 3) return out;

  const std::size_t smooth_half = samples(0.010, fs);
  std::vector<double> s = moving_average(ecg, smooth_half);
  s = moving_average(s, smooth_half);

  std::vector<double> sq(n, 0.0);
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double d = (s[i + 1] - s[i - 1]) * 0.5;
    sq[i] = d * d;
  }
  const std::vector<double> integ = moving_average(sq, samples(0.075, fs));
  const std::vector<double> roll = rolling_max_centered(integ, samples(1.0, fs));
  const double global_max = *std::max_element(integ.begin(), integ.end());
  if (!(global_max > 0.0)) return out;

  const std::size_t refractory = samples(kMinRrS, fs);
  std::vector<std::size_t> cand;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const double v = integ[i];
    if (v <= 0.5 * roll[i] || v <= 1e-9 * global_max) continue;
    if (!(v > integ[i - 1] && v >= integ[i + 1])) continue;
    if (!cand.empty() && i - cand.back() < refractory) {
      if (v > integ[cand.back()]) cand.back() = i;
      continue;
    }
    cand.push_back(i);
  }

  const std::size_t search = samples(0.075, fs);
  for (std::size_t c : cand) {
    const std::size_t lo = c >= search ? c - search : 0;
    const std::size_t hi = std::min(n, c + search + 1);
    std::size_t best = lo;
    for (std::size_t i = lo; i < hi; ++i) {
      if (ecg[i] > ecg[best]) best = i;
    }
    if (!out.peaks.empty() && best <= out.peaks.back()) continue;
    if (!out.peaks.empty() && best - out.peaks.back() < refractory) {
      if (ecg[best] > ecg[out.peaks.back()]) out.peaks.back() = best;
      continue;
    }
    out.peaks.push_back(best);
  }

  const double max_gap = kMaxRrS * fs;
  for (std::size_t k = 0; k + 1 < out.peaks.size(); ++k) {
    if (static_cast<double>(out.peaks[k + 1] - out.peaks[k]) > max_gap) {
      out.long_intervals.push_back(k);
    }
  }
  return out;
}

std::vector<double> hr_series(std::span<const std::size_t> peaks, double fs, std::size_t out_len) {
  if (peaks.size() < 2) {
    throw DataError("HR extraction needs at least 2 R-peaks (found " +
                    std::to_string(peaks.size()) +
                    "); fall back to the previous segment's final HR");
  }
  std::vector<double> bpm;
  bpm.reserve(peaks.size() - 1);
  for (std::size_t k = 0; k + 1 < peaks.size(); ++k) {
    if (peaks[k + 1] <= peaks[k]) throw ParameterError("hr_series: peaks must be strictly increasing");
    bpm.push_back(60.0 * fs / static_cast<double>(peaks[k + 1] - peaks[k]));
  }
  return hold_intervals(peaks, bpm, out_len);
}

// ---------------------------------------------------------------------------
// Respiration

RespiratorySeries rsp_rate_amp(std::span<const double> rsp, double fs) {
  const std::size_t n = rsp.size();
  const auto no_cycle = [] {
    return DataError(
        "no full breath cycle in scope; fall back to the surrounding-window respiration estimate");
  };
  if (n < 3) throw no_cycle();

  std::vector<double> x = moving_average(rsp, samples(0.05, fs));
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double& v : x) {
    v -= mean;
    ss += v * v;
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 1e-12)) throw no_cycle();
  const double h = 0.3 * sd;

  // Schmitt trigger: an extremum is committed once the signal crosses the
  // opposite threshold.
  enum class State { Unknown, High, Low } state = State::Unknown;
  std::vector<std::size_t> peaks;
  std::vector<double> amps;
  std::size_t ext = 0;
  bool have_trough = false;
  double last_trough = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x[i];
    switch (state) {
      case State::Unknown:
        if (v > h) {
          state = State::High;
          ext = i;
        } else if (v < -h) {
          state = State::Low;
          ext = i;
        }
        break;
      case State::High:
        if (v > x[ext]) ext = i;
        if (v < -h) {
          peaks.push_back(ext);
          amps.push_back(have_trough ? x[ext] - last_trough
                                     : std::numeric_limits<double>::quiet_NaN());
          state = State::Low;
          ext = i;
        }
        break;
      case State::Low:
        if (v < x[ext]) ext = i;
        if (v > h) {
          last_trough = x[ext];
          have_trough = true;
          state = State::High;
          ext = i;
        }
        break;
    }
  }
  if (peaks.size() < 2) throw no_cycle();

  std::vector<double> rate;
  for (std::size_t k = 0; k + 1 < peaks.size(); ++k) {
    rate.push_back(60.0 * fs / static_cast<double>(peaks[k + 1] - peaks[k]));
  }
  // Amplitude needs a trough before the peak; the first peak may lack one.
  std::vector<std::size_t> amp_marks;
  std::vector<double> amp_vals;
  for (std::size_t k = 0; k < peaks.size(); ++k) {
    if (std::isnan(amps[k])) continue;
    amp_marks.push_back(peaks[k]);
    amp_vals.push_back(amps[k]);
  }
  if (amp_vals.empty()) throw no_cycle();

  RespiratorySeries out;
  out.rate = hold_intervals(peaks, rate, n);
  out.amp = hold_intervals(amp_marks, amp_vals, n);
  return out;
}

LldSeries extract_llds(const signal::Window& window) {
  const double fs = window.sample_rate_hz;
  const std::size_t n = window.size();
  LldSeries out;
  const PeakDetection det = detect_r_peaks(window.ecg, fs);
  out.hr = hr_series(det.peaks, fs, n);
  out.hr_gap.assign(n, false);
  for (std::size_t k : det.long_intervals) {
    std::fill(out.hr_gap.begin() + static_cast<std::ptrdiff_t>(det.peaks[k]),
              out.hr_gap.begin() + static_cast<std::ptrdiff_t>(det.peaks[k + 1]), true);
  }
  out.eda = window.eda;
  RespiratorySeries resp = rsp_rate_amp(window.rsp, fs);
  out.rsp_amp = std::move(resp.amp);
  out.rsp_rate = std::move(resp.rate);
  return out;
}

// ---------------------------------------------------------------------------
// HLDs

HldVector HldVector::from_array(std::span<const double> a) {
  if (a.size() != 6) throw ParameterError("HldVector needs exactly 6 values");
  return {a[0], a[1], a[2], a[3], a[4], a[5]};
}

HldVector hld(std::span<const double> series) {
  if (series.empty()) throw ParameterError("hld: empty series");
  const std::size_t n = series.size();
  HldVector h;
  double sum = 0.0;
  h.min = series[0];
  h.max = series[0];
  for (double v : series) {
    sum += v;
    h.min = std::min(h.min, v);
    h.max = std::max(h.max, v);
  }
  h.mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : series) ss += (v - h.mean) * (v - h.mean);
  h.var = ss / static_cast<double>(n);
  h.std = std::sqrt(h.var);
  // Rounding can push the mean a hair outside [min, max] on constant input.
  h.mean = std::clamp(h.mean, h.min, h.max);

  std::vector<double> tmp(series.begin(), series.end());
  const std::size_t mid = n / 2;
  std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(mid), tmp.end());
  const double upper = tmp[mid];
  if (n % 2 == 1) {
    h.median = upper;
  } else {
    const double lower =
        *std::max_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(mid));
    h.median = 0.5 * (lower + upper);
  }
  return h;
}

RawFeatureMatrix raw_features(const signal::Window& window) {
  const auto ranges = signal::sliding_ranges(window.size(), window.sample_rate_hz, 2.0, 1.0);
  if (ranges.size() != static_cast<std::size_t>(kNumSegments)) {
    throw ParameterError("window " + window.participant_id + "#" + std::to_string(window.index) +
                         " yields " + std::to_string(ranges.size()) + " segments, expected " +
                         std::to_string(kNumSegments));
  }
  LldSeries lld;
  try {
    lld = extract_llds(window);
  } catch (const DataError& e) {
    throw DataError("window " + window.participant_id + "#" + std::to_string(window.index) +
                    ", segments 0-18: " + e.what());
  }

  RawFeatureMatrix out;
  out.grid.resize(kNumSegments, kRawCols);
  std::vector<bool> hr_failed(kNumSegments, false);
  const std::vector<double>* series[kNumModalities] = {&lld.hr, &lld.eda, &lld.rsp_amp,
                                                       &lld.rsp_rate};
  for (int s = 0; s < kNumSegments; ++s) {
    const auto& r = ranges[static_cast<std::size_t>(s)];
    for (int m = 0; m < kNumModalities; ++m) {
      const std::span<const double> seg(series[m]->data() + r.begin, r.size());
      const auto a = hld(seg).to_array();
      for (int j = 0; j < kNumHld; ++j) out.grid(s, m * kNumHld + j) = a[static_cast<std::size_t>(j)];
    }
    hr_failed[static_cast<std::size_t>(s)] =
        std::all_of(lld.hr_gap.begin() + static_cast<std::ptrdiff_t>(r.begin),
                    lld.hr_gap.begin() + static_cast<std::ptrdiff_t>(r.end),
                    [](bool g) { return g; });
  }

  // Segments without a usable HR inherit the nearest preceding valid segment
  // (the following one for a leading run).
  const auto first_ok = std::find(hr_failed.begin(), hr_failed.end(), false);
  if (first_ok == hr_failed.end()) {
    throw DataError("window " + window.participant_id + "#" + std::to_string(window.index) +
                    ", segment 0: no R-peak interval within physiological bounds");
  }
  int last_ok = static_cast<int>(first_ok - hr_failed.begin());
  for (int s = 0; s < kNumSegments; ++s) {
    if (hr_failed[static_cast<std::size_t>(s)]) {
      out.grid.block(s, 0, 1, kNumHld) = out.grid.block(last_ok, 0, 1, kNumHld);
    } else {
      last_ok = s;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Change scores

BaselineScore baseline_score(const std::string& participant_id,
                             std::span<const RawFeatureMatrix> baseline_windows) {
  if (baseline_windows.empty()) {
    throw DataError("participant " + participant_id + ": no baseline windows for change scores");
  }
  RowVector sum = RowVector::Zero(kRawCols);
  std::size_t rows = 0;
  for (const auto& w : baseline_windows) {
    if (w.grid.cols() != kRawCols) throw ParameterError("baseline_score: expected 24 columns");
    sum += w.grid.colwise().sum();
    rows += static_cast<std::size_t>(w.grid.rows());
  }
  sum /= static_cast<double>(rows);
  BaselineScore out;
  out.participant_id = participant_id;
  out.n_segments = rows;
  for (int m = 0; m < kNumModalities; ++m) {
    out.per_modality[static_cast<std::size_t>(m)] =
        HldVector::from_array(std::span<const double>(sum.data() + m * kNumHld, kNumHld));
  }
  return out;
}

ChangeScore change_score(const HldVector& post, const HldVector& baseline) {
  const auto p = post.to_array();
  const auto b = baseline.to_array();
  double dot = 0.0, np = 0.0, nb = 0.0, d2 = 0.0;
  for (std::size_t i = 0; i < 6; ++i) {
    dot += p[i] * b[i];
    np += p[i] * p[i];
    nb += b[i] * b[i];
    d2 += (p[i] - b[i]) * (p[i] - b[i]);
  }
  ChangeScore cs;
  cs.euclid = std::sqrt(d2);
  if (np == 0.0 || nb == 0.0) {
    cs.degenerate = true;
    cs.cosine = 0.0;
  } else {
    cs.cosine = std::clamp(dot / (std::sqrt(np) * std::sqrt(nb)), -1.0, 1.0);
  }
  return cs;
}

ChangeScoreMatrix change_scores_from_raw(const RawFeatureMatrix& raw, const BaselineScore& baseline) {
  if (raw.grid.cols() != kRawCols) throw ParameterError("change scores: expected 24 raw columns");
  ChangeScoreMatrix out;
  out.grid.resize(raw.grid.rows(), kChangeCols);
  for (Eigen::Index s = 0; s < raw.grid.rows(); ++s) {
    for (int m = 0; m < kNumModalities; ++m) {
      const HldVector post =
          HldVector::from_array(std::span<const double>(raw.grid.row(s).data() + m * kNumHld, kNumHld));
      const ChangeScore cs = change_score(post, baseline.per_modality[static_cast<std::size_t>(m)]);
      out.grid(s, 2 * m) = cs.cosine;
      out.grid(s, 2 * m + 1) = cs.euclid;
    }
  }
  return out;
}

ChangeScoreMatrix change_score_matrix(const signal::Window& window, const BaselineScore& baseline) {
  if (window.participant_id != baseline.participant_id) {
    throw DataError("change score: window of participant " + window.participant_id +
                    " compared against baseline of " + baseline.participant_id);
  }
  return change_scores_from_raw(raw_features(window), baseline);
}

std::array<double, 6> delta_change_score(const HldVector& post, const HldVector& baseline) {
  const auto p = post.to_array();
  const auto b = baseline.to_array();
  std::array<double, 6> out{};
  for (std::size_t i = 0; i < 6; ++i) out[i] = p[i] - b[i];
  return out;
}

Matrix delta_from_raw(const RawFeatureMatrix& raw, const BaselineScore& baseline) {
  if (raw.grid.cols() != kRawCols) throw ParameterError("delta scores: expected 24 raw columns");
  Matrix out = raw.grid;
  for (int m = 0; m < kNumModalities; ++m) {
    const auto b = baseline.per_modality[static_cast<std::size_t>(m)].to_array();
    for (int j = 0; j < kNumHld; ++j) out.col(m * kNumHld + j).array() -= b[static_cast<std::size_t>(j)];
  }
  return out;
}

Matrix featurize(const RawFeatureMatrix& raw, FeatureMode mode, const BaselineScore* baseline) {
  if (mode == FeatureMode::Raw) return raw.grid;
  if (baseline == nullptr) {
    throw DataError(std::string("feature mode '") + std::string(to_string(mode)) +
                    "' needs a baseline score");
  }
  if (mode == FeatureMode::Change) return change_scores_from_raw(raw, *baseline).grid;
  return delta_from_raw(raw, *baseline);
}

}  // namespace mimil::features
