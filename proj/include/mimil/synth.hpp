#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mimil/bag.hpp"
#include "mimil/common.hpp"
#include "mimil/features.hpp"
#include "mimil/io.hpp"
#include "mimil/signal.hpp"

namespace mimil::synth {

enum class PatternType { EdaRamp, HrFreeze, HrVarBurst, RspRateDrift };
std::string_view to_string(PatternType t);
PatternType parse_pattern_type(std::string_view s);
features::Modality pattern_modality(PatternType t);

// "local": transient patterns inside a window. "shift": sustained,
// baseline-relative level shifts of random sign over the whole window.
enum class PatternStyle { Local, Shift };

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct NoiseSd {
  double ecg = 0.05;
  double eda = 0.03;
  double rsp = 0.05;
};

struct SynthConfig {
  int n_cws = 20;
  int n_cwns = 20;
  int windows_per_participant = 20;
  double baseline_s = 240.0;
  double sample_rate_hz = signal::kDefaultSampleRateHz;
  std::vector<PatternType> patterns{PatternType::EdaRamp, PatternType::HrFreeze, PatternType::HrVarBurst,
                                    PatternType::RspRateDrift};
  PatternStyle style = PatternStyle::Local;
  Range pattern_duration_s{2.0, 5.0};
  // Probability that a CWS window carries a pattern in a given planted modality.
  double pattern_probability = 1.0;
  double pattern_amplitude = 0.6;
  bool asynchrony = true;
  double decoy_probability = 0.2;
  double decoy_scale = 0.5;
  NoiseSd noise_sd;

  // Per-participant carriers.
  Range rest_hr_bpm{90.0, 120.0};
  Range task_hr_offset_bpm{-4.0, 10.0};
  double hr_fluct_sd_bpm = 2.5;
  double rsa_bpm = 2.0;
  Range eda_level_us{2.0, 10.0};
  double eda_drift_sd_us = 0.15;
  double scr_rate_per_min = 3.0;
  Range scr_amp_us{0.03, 0.25};
  Range rsp_rate_bpm{15.0, 25.0};
  double rsp_rate_sd_bpm = 1.2;
  Range rsp_amp{0.6, 1.4};
  double rsp_amp_sd = 0.12;
  // Multiplicative channel gain per participant (log-uniform), EDA and RSP.
  Range channel_gain{1.0, 1.0};

  bool write_recordings = false;
  std::uint64_t seed = 0;

  void validate() const;
  io::Json to_json() const;
  // Unknown keys are rejected with ConfigError naming the key.
  static SynthConfig from_json(const io::Json& j);
};

struct PatternDescriptor {
  PatternType type = PatternType::EdaRamp;
  features::Modality modality = features::Modality::EDA;
  double start_s = 0.0;  // relative to the window start
  double duration_s = 0.0;
  double amplitude = 0.0;
  bool decoy = false;
};

struct WindowTruth {
  std::string window_id;
  std::string participant_id;
  signal::Group group = signal::Group::CWNS;
  int index = 0;
  // Per modality (canonical order) instance labels.
  std::array<std::array<int, features::kNumSegments>, features::kNumModalities> labels{};
  std::vector<PatternDescriptor> patterns;

  int bag_label() const;  // max over instance labels
  bool planted(features::Modality m) const;
};

struct SynthGroundTruth {
  std::map<std::string, WindowTruth> windows;
  io::Json to_json() const;
  static SynthGroundTruth from_json(const io::Json& j);
};

// Latent physiological state sampled on the signal grid; rendering turns it
// into ECG/EDA/RSP channels.
struct LatentRecording {
  std::string participant_id;
  signal::Group group = signal::Group::CWNS;
  signal::Condition condition = signal::Condition::Baseline;
  double sample_rate_hz = signal::kDefaultSampleRateHz;
  std::vector<double> hr_bpm;
  std::vector<double> hr_alternans_bpm;
  std::vector<double> eda_us;
  std::vector<double> eda_noise_scale;
  std::vector<double> rsp_rate_bpm;
  std::vector<double> rsp_amp;
  double eda_gain = 1.0;
  double rsp_gain = 1.0;
  double eda_noise_sd_us = 0.03;  // sets the EDA pattern height
  std::uint64_t render_seed = 0;

  std::size_t size() const { return hr_bpm.size(); }
  double duration_s() const { return static_cast<double>(size()) / sample_rate_hz; }
};

signal::RawRecording render(const LatentRecording& latent, const NoiseSd& noise);

// Segment i of a 20 s window covers [i, i+2) s; it is labeled when it
// overlaps [start_s, start_s + duration_s) with positive length.
std::array<int, features::kNumSegments> overlap_labels(double start_s, double duration_s);

// Adds one pattern at absolute time `start_s` with the given amplitude scale
// (1 = nominal). Amplitude 0 leaves the recording untouched and labels
// nothing. The returned labels are relative to `window_start_s`. Throws
// ParameterError when the pattern leaves the recording.
std::array<int, features::kNumSegments> plant_pattern(LatentRecording& rec, PatternType type, double start_s,
                                                      double duration_s, double amplitude, Rng& rng,
                                                      double window_start_s = 0.0,
                                                      PatternStyle style = PatternStyle::Local);

struct ParticipantData {
  LatentRecording baseline;
  LatentRecording task;
  std::vector<WindowTruth> truth;  // task windows
};

ParticipantData generate_participant(signal::Group group, const std::string& participant_id,
                                     const SynthConfig& config, Rng& rng);

struct SynthDataset {
  SynthConfig config;
  std::vector<WindowFeatures> windows;  // baseline and task
  SynthGroundTruth truth;
  std::vector<std::filesystem::path> manifest;  // empty unless recordings were written

  std::vector<Bag> bags(features::FeatureMode mode) const;
};

// Generates every participant, featurizes all windows and, when `out_dir` is
// given, writes bags_<mode>.jsonl for all modes, ground_truth.json,
// config.json and manifest.json (empty unless write_recordings saved the recordings).
SynthDataset generate_dataset(const SynthConfig& config,
                              const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Area under the ROC curve (ties count one half).
double roc_auc(std::span<const double> scores, std::span<const int> labels);

struct SeparabilityReport {
  features::Modality modality = features::Modality::EDA;
  int column = 0;
  std::string feature_name;
  double auc = 0.5;
};

// For every column of the planted modalities, a bag score of max (or min) over
// instances thresholded directly; reports the best column of each modality.
std::vector<SeparabilityReport> separability_oracle(std::span<const Bag> bags, const SynthConfig& config);

}  // namespace mimil::synth
