#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mimil::signal {

enum class Group { CWS, CWNS };
enum class Condition { Baseline, Task };

std::string_view to_string(Group g);
std::string_view to_string(Condition c);
Group parse_group(std::string_view s);
Condition parse_condition(std::string_view s);

// Binary label: CWS is the positive class.
inline int group_label(Group g) { return g == Group::CWS ? 1 : 0; }

inline constexpr double kDefaultSampleRateHz = 1250.0;

struct RawRecording {
  std::string participant_id;
  Group group = Group::CWNS;
  Condition condition = Condition::Baseline;
  double sample_rate_hz = kDefaultSampleRateHz;
  std::vector<double> ecg;
  std::vector<double> eda;  // microsiemens
  std::vector<double> rsp;

  std::size_t size() const { return ecg.size(); }
  double duration_s() const { return static_cast<double>(size()) / sample_rate_hz; }
  // Throws ParameterError when channel lengths differ or the rate is invalid.
  void validate() const;
};

struct Window {
  std::string participant_id;
  Group group = Group::CWNS;
  Condition condition = Condition::Baseline;
  int index = 0;  // position within the recording
  double start_s = 0.0;
  double sample_rate_hz = kDefaultSampleRateHz;
  std::vector<double> ecg;
  std::vector<double> eda;
  std::vector<double> rsp;

  std::size_t size() const { return ecg.size(); }
  double duration_s() const { return static_cast<double>(size()) / sample_rate_hz; }
};

struct Segment {
  int index = 0;
  std::size_t offset = 0;  // first sample within the window
  std::vector<double> ecg;
  std::vector<double> eda;
  std::vector<double> rsp;
};

struct SampleRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

// round(seconds * rate), rejecting non-positive results.
std::size_t seconds_to_samples(double seconds, double sample_rate_hz);

// Frames of `len_s` every `hop_s` over n samples: floor((n - L)/H) + 1 of them.
// Partial trailing frames are dropped. Empty when n < L.
std::vector<SampleRange> sliding_ranges(std::size_t n, double sample_rate_hz, double len_s,
                                        double hop_s);

// Causal Butterworth high-pass realized as cascaded second-order sections
// (plus one first-order section for odd orders), direct form II transposed.
// The state is primed with the steady-state response to the first sample, so a
// constant input produces zero output from the start.
class HighpassFilter {
 public:
  HighpassFilter(double sample_rate_hz, double cutoff_hz, int order);

  double step(double x);
  void reset();
  void process(std::span<const double> in, std::span<double> out);

  int order() const { return order_; }

 private:
  struct Section {
    double b0, b1, b2, a1, a2;
    double z1 = 0.0, z2 = 0.0;
  };
  std::vector<Section> sections_;
  int order_;
  bool primed_ = false;
};

struct FilterSpec {
  double cutoff_hz = 0.05;
  int order = 2;
};

std::vector<double> highpass_filter(std::span<const double> series, double sample_rate_hz,
                                    double cutoff_hz, int order);

// Applies the high-pass filter to every channel.
RawRecording preprocess(const RawRecording& rec, const FilterSpec& spec = {});

std::vector<Window> extract_windows(const RawRecording& rec, double win_s = 20.0,
                                    double hop_s = 15.0);

std::vector<Segment> segment_window(const Window& window, double seg_s = 2.0,
                                    double hop_s = 1.0);

// Recording files: CSV `t,ecg,eda,rsp` plus a JSON metadata sidecar.
RawRecording load_recording(const std::filesystem::path& csv_path,
                            const std::filesystem::path& meta_path);
void save_recording(const RawRecording& rec, const std::filesystem::path& csv_path,
                    const std::filesystem::path& meta_path);

struct ManifestEntry {
  std::filesystem::path meta;
  std::filesystem::path csv;
};

// Dataset manifest: JSON array of {"meta": ..., "csv": ...}. Relative paths
// resolve against the manifest's directory.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

}  // namespace mimil::signal
