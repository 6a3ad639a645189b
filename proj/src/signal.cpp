#include "mimil/signal.hpp"

#include <charconv>
#include <cstdio>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mimil/common.hpp"
#include "mimil/io.hpp"

namespace mimil::signal {

namespace fs = std::filesystem;

std::string_view to_string(Group g) { return g == Group::CWS ? "CWS" : "CWNS"; }

std::string_view to_string(Condition c) { return c == Condition::Baseline ? "baseline" : "task"; }

Group parse_group(std::string_view s) {
  if (s == "CWS") return Group::CWS;
  if (s == "CWNS") return Group::CWNS;
  throw ParameterError("unknown group '" + std::string(s) + "' (expected CWS or CWNS)");
}

Condition parse_condition(std::string_view s) {
  if (s == "baseline") return Condition::Baseline;
  if (s == "task") return Condition::Task;
  throw ParameterError("unknown condition '" + std::string(s) + "' (expected baseline or task)");
}

void RawRecording::validate() const {
  if (!(sample_rate_hz > 0.0) || !std::isfinite(sample_rate_hz)) {
    throw ParameterError("recording " + participant_id + ": sample_rate_hz must be positive");
  }
  if (eda.size() != ecg.size() || rsp.size() != ecg.size()) {
    throw ParameterError("recording " + participant_id + ": channel lengths differ (ecg " +
                         std::to_string(ecg.size()) + ", eda " + std::to_string(eda.size()) +
                         ", rsp " + std::to_string(rsp.size()) + ")");
  }
}

std::size_t seconds_to_samples(double seconds, double sample_rate_hz) {
  if (!(sample_rate_hz > 0.0)) throw ParameterError("sample rate must be positive");
  const double n = std::round(seconds * sample_rate_hz);
  if (!(n >= 1.0)) {
    throw ParameterError("duration " + std::to_string(seconds) + " s is shorter than one sample");
  }
  return static_cast<std::size_t>(n);
}

std::vector<SampleRange> sliding_ranges(std::size_t n, double sample_rate_hz, double len_s,
                                        double hop_s) {
  const std::size_t len = seconds_to_samples(len_s, sample_rate_hz);
  const std::size_t hop = seconds_to_samples(hop_s, sample_rate_hz);
  std::vector<SampleRange> out;
  if (n < len) return out;
  const std::size_t count = (n - len) / hop + 1;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back({i * hop, i * hop + len});
  return out;
}

// ---------------------------------------------------------------------------
// High-pass filter

HighpassFilter::HighpassFilter(double sample_rate_hz, double cutoff_hz, int order)
    : order_(order) {
  if (!(sample_rate_hz > 0.0)) throw ParameterError("highpass: sample rate must be positive");
  if (order < 1) throw ParameterError("highpass: order must be >= 1");
  if (!(cutoff_hz > 0.0)) throw ParameterError("highpass: cutoff must be positive");
  if (cutoff_hz >= sample_rate_hz / 2.0) {
    throw ParameterError("highpass: cutoff " + std::to_string(cutoff_hz) +
                         " Hz is not below Nyquist (" + std::to_string(sample_rate_hz / 2.0) +
                         " Hz)");
  }
  const double w0 = 2.0 * std::numbers::pi * cutoff_hz / sample_rate_hz;
  const double cw = std::cos(w0);
  const double sw = std::sin(w0);
  for (int k = 1; k <= order / 2; ++k) {
    const double phi = std::numbers::pi * (2.0 * k + order - 1.0) / (2.0 * order);
    const double q = -1.0 / (2.0 * std::cos(phi));
    const double alpha = sw / (2.0 * q);
    const double a0 = 1.0 + alpha;
    Section s{};
    s.b0 = (1.0 + cw) / 2.0 / a0;
    s.b1 = -(1.0 + cw) / a0;
    s.b2 = s.b0;
    s.a1 = -2.0 * cw / a0;
    s.a2 = (1.0 - alpha) / a0;
    sections_.push_back(s);
  }
  if (order % 2 == 1) {
    const double k = std::tan(w0 / 2.0);
    Section s{};
    s.b0 = 1.0 / (1.0 + k);
    s.b1 = -s.b0;
    s.b2 = 0.0;
    s.a1 = (k - 1.0) / (1.0 + k);
    s.a2 = 0.0;
    sections_.push_back(s);
  }
}

void HighpassFilter::reset() {
  for (auto& s : sections_) s.z1 = s.z2 = 0.0;
  primed_ = false;
}

double HighpassFilter::step(double x) {
  if (!primed_) {
    // Steady state for a constant input equal to x.
    double u = x;
    for (auto& s : sections_) {
      const double y = u * (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
      s.z2 = s.b2 * u - s.a2 * y;
      s.z1 = s.b1 * u - s.a1 * y + s.z2;
      u = y;
    }
    primed_ = true;
  }
  double u = x;
  for (auto& s : sections_) {
    const double y = s.b0 * u + s.z1;
    s.z1 = s.b1 * u - s.a1 * y + s.z2;
    s.z2 = s.b2 * u - s.a2 * y;
    u = y;
  }
  return u;
}

void HighpassFilter::process(std::span<const double> in, std::span<double> out) {
  if (in.size() != out.size()) throw ParameterError("highpass: output size mismatch");
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = step(in[i]);
}

std::vector<double> highpass_filter(std::span<const double> series, double sample_rate_hz,
                                    double cutoff_hz, int order) {
  if (series.empty()) throw ParameterError("highpass: empty series");
  HighpassFilter filter(sample_rate_hz, cutoff_hz, order);
  if (series.size() < 3 * static_cast<std::size_t>(order)) {
    throw ParameterError("highpass: series shorter than 3 x order samples");
  }
  std::vector<double> out(series.size());
  filter.process(series, out);
  return out;
}

RawRecording preprocess(const RawRecording& rec, const FilterSpec& spec) {
  rec.validate();
  RawRecording out = rec;
  out.ecg = highpass_filter(rec.ecg, rec.sample_rate_hz, spec.cutoff_hz, spec.order);
  out.eda = highpass_filter(rec.eda, rec.sample_rate_hz, spec.cutoff_hz, spec.order);
  out.rsp = highpass_filter(rec.rsp, rec.sample_rate_hz, spec.cutoff_hz, spec.order);
  return out;
}

// ---------------------------------------------------------------------------
// Windowing

std::vector<Window> extract_windows(const RawRecording& rec, double win_s, double hop_s) {
  rec.validate();
  const auto ranges = sliding_ranges(rec.size(), rec.sample_rate_hz, win_s, hop_s);
  if (ranges.empty()) {
    throw DataError("recording " + rec.participant_id + " (" + std::to_string(rec.duration_s()) +
                    " s) is shorter than one " + std::to_string(win_s) + " s window");
  }
  std::vector<Window> out;
  out.reserve(ranges.size());
  int index = 0;
  for (const auto& r : ranges) {
    Window w;
    w.participant_id = rec.participant_id;
    w.group = rec.group;
    w.condition = rec.condition;
    w.index = index++;
    w.start_s = static_cast<double>(r.begin) / rec.sample_rate_hz;
    w.sample_rate_hz = rec.sample_rate_hz;
    w.ecg.assign(rec.ecg.begin() + r.begin, rec.ecg.begin() + r.end);
    w.eda.assign(rec.eda.begin() + r.begin, rec.eda.begin() + r.end);
    w.rsp.assign(rec.rsp.begin() + r.begin, rec.rsp.begin() + r.end);
    out.push_back(std::move(w));
  }
  return out;
}

std::vector<Segment> segment_window(const Window& window, double seg_s, double hop_s) {
  if (seg_s > window.duration_s() + 0.5 / window.sample_rate_hz) {
    throw ParameterError("segment length " + std::to_string(seg_s) +
                         " s exceeds window duration " + std::to_string(window.duration_s()) +
                         " s");
  }
  const auto ranges = sliding_ranges(window.size(), window.sample_rate_hz, seg_s, hop_s);
  std::vector<Segment> out;
  out.reserve(ranges.size());
  int index = 0;
  for (const auto& r : ranges) {
    Segment s;
    s.index = index++;
    s.offset = r.begin;
    s.ecg.assign(window.ecg.begin() + r.begin, window.ecg.begin() + r.end);
    s.eda.assign(window.eda.begin() + r.begin, window.eda.begin() + r.end);
    s.rsp.assign(window.rsp.begin() + r.begin, window.rsp.begin() + r.end);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

double parse_double(std::string_view field, std::size_t line_no, const fs::path& path) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\r' || field.back() == '\t')) {
    field.remove_suffix(1);
  }
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" +
                    std::string(field) + "'");
  }
  return v;
}

}  // namespace

RawRecording load_recording(const fs::path& csv_path, const fs::path& meta_path) {
  RawRecording rec;
  const io::Json meta = io::read_json(meta_path);
  try {
    rec.participant_id = meta.at("participant_id").get<std::string>();
    rec.group = parse_group(meta.at("group").get<std::string>());
    rec.condition = parse_condition(meta.at("condition").get<std::string>());
    rec.sample_rate_hz = meta.value("sample_rate_hz", kDefaultSampleRateHz);
  } catch (const io::Json::exception& e) {
    throw DataError(meta_path.string() + ": " + e.what());
  }

  const std::string text = io::read_text(csv_path);
  std::string_view rest(text);
  std::size_t line_no = 0;
  bool header_seen = false;
  while (!rest.empty()) {
    const std::size_t nl = rest.find('\n');
    std::string_view line = rest.substr(0, nl);
    rest = nl == std::string_view::npos ? std::string_view{} : rest.substr(nl + 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    if (!header_seen) {
      if (line != "t,ecg,eda,rsp") {
        throw DataError(csv_path.string() + ": expected header 't,ecg,eda,rsp'");
      }
      header_seen = true;
      continue;
    }
    double vals[4];
    std::size_t col = 0;
    while (col < 4) {
      const std::size_t comma = line.find(',');
      const std::string_view field = line.substr(0, comma);
      vals[col++] = parse_double(field, line_no, csv_path);
      if (comma == std::string_view::npos) break;
      line.remove_prefix(comma + 1);
    }
    if (col != 4) throw DataError(csv_path.string() + ":" + std::to_string(line_no) + ": expected 4 columns");
    rec.ecg.push_back(vals[1]);
    rec.eda.push_back(vals[2]);
    rec.rsp.push_back(vals[3]);
  }
  if (!header_seen) throw DataError(csv_path.string() + ": empty recording file");
  rec.validate();
  return rec;
}

void save_recording(const RawRecording& rec, const fs::path& csv_path, const fs::path& meta_path) {
  rec.validate();
  std::string out = "t,ecg,eda,rsp\n";
  out.reserve(rec.size() * 48);
  char buf[160];
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const int n = std::snprintf(buf, sizeof buf, "%.6f,%.9g,%.9g,%.9g\n",
                                static_cast<double>(i) / rec.sample_rate_hz, rec.ecg[i],
                                rec.eda[i], rec.rsp[i]);
    out.append(buf, static_cast<std::size_t>(n));
  }
  io::write_text(csv_path, out);
  io::Json meta = {{"participant_id", rec.participant_id},
                   {"group", std::string(to_string(rec.group))},
                   {"condition", std::string(to_string(rec.condition))},
                   {"sample_rate_hz", rec.sample_rate_hz}};
  io::write_json(meta_path, meta);
}

std::vector<ManifestEntry> load_manifest(const fs::path& path) {
  const io::Json j = io::read_json(path);
  if (!j.is_array()) throw DataError(path.string() + ": manifest must be a JSON array");
  const fs::path base = path.parent_path();
  std::vector<ManifestEntry> out;
  for (const auto& e : j) {
    try {
      out.push_back({io::resolve(base, e.at("meta").get<std::string>()),
                     io::resolve(base, e.at("csv").get<std::string>())});
    } catch (const io::Json::exception& ex) {
      throw DataError(path.string() + ": " + ex.what());
    }
  }
  return out;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const fs::path& path) {
  io::Json j = io::Json::array();
  const fs::path base = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  for (const auto& e : entries) {
    j.push_back({{"meta", fs::relative(e.meta, base).generic_string()},
                 {"csv", fs::relative(e.csv, base).generic_string()}});
  }
  io::write_json(path, j);
}

}  // namespace mimil::signal
