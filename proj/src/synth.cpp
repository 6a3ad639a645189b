#include "mimil/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mimil::synth {

namespace fs = std::filesystem;
using features::Modality;
using signal::Condition;
using signal::Group;

constexpr double kPi = std::numbers::pi;
constexpr double kWindowS = 20.0;
constexpr double kHopS = 15.0;
constexpr double kControlHz = 25.0;

std::string_view to_string(PatternType t) {
  switch (t) {
    case PatternType::EdaRamp: return "eda_ramp";
    case PatternType::HrFreeze: return "hr_freeze";
    case PatternType::HrVarBurst: return "hr_var_burst";
    case PatternType::RspRateDrift: return "rsp_rate_drift";
  }
  return "?";
}

PatternType parse_pattern_type(std::string_view s) {
  for (auto t : {PatternType::EdaRamp, PatternType::HrFreeze, PatternType::HrVarBurst, PatternType::RspRateDrift}) {
    if (to_string(t) == s) return t;
  }
  throw ParameterError("unknown pattern type '" + std::string(s) +
                       "' (eda_ramp|hr_freeze|hr_var_burst|rsp_rate_drift)");
}

Modality pattern_modality(PatternType t) {
  switch (t) {
    case PatternType::EdaRamp: return Modality::EDA;
    case PatternType::HrFreeze:
    case PatternType::HrVarBurst: return Modality::HR;
    case PatternType::RspRateDrift: return Modality::RSP_RATE;
  }
  return Modality::HR;
}

// ---------------------------------------------------------------------------
// Config

void SynthConfig::validate() const {
  const auto fail = [](const std::string& m) { throw ConfigError("synth config: " + m); };
  if (n_cws < 7 || n_cwns < 7) fail("n_cws and n_cwns must be >= 7 for a person-disjoint split");
  if (windows_per_participant < 1) fail("windows_per_participant must be >= 1");
  if (baseline_s < kWindowS) fail("baseline_s must cover at least one 20 s window");
  if (!(sample_rate_hz >= 50.0)) fail("sample_rate_hz must be >= 50");
  if (pattern_duration_s.lo < 2.0 || pattern_duration_s.hi > 5.0 || pattern_duration_s.lo > pattern_duration_s.hi) {
    fail("pattern_duration_s must lie within [2, 5]");
  }
  if (!(pattern_probability >= 0.0 && pattern_probability <= 1.0)) fail("pattern_probability must be in [0, 1]");
  if (!(decoy_probability >= 0.0 && decoy_probability <= 1.0)) fail("decoy_probability must be in [0, 1]");
  if (!(pattern_amplitude >= 0.0)) fail("pattern_amplitude must be >= 0");
  if (noise_sd.ecg < 0.0 || noise_sd.eda < 0.0 || noise_sd.rsp < 0.0) fail("noise_sd must be >= 0");
  if (!(channel_gain.lo > 0.0 && channel_gain.hi >= channel_gain.lo)) fail("channel_gain must be a positive range");
  if (rest_hr_bpm.lo < 40.0 || rest_hr_bpm.hi > 160.0) fail("rest_hr_bpm must lie within [40, 160]");
}

namespace {

io::Json range_json(const Range& r) { return io::Json::array({r.lo, r.hi}); }

Range parse_range(const io::Json& v) {
  const auto a = v.get<std::vector<double>>();
  if (a.size() != 2) throw ConfigError("expected a [lo, hi] pair");
  return {a[0], a[1]};
}

}  // namespace

io::Json SynthConfig::to_json() const {
  std::vector<std::string> pats;
  for (auto p : patterns) pats.emplace_back(to_string(p));
  return {{"n_cws", n_cws},
          {"n_cwns", n_cwns},
          {"windows_per_participant", windows_per_participant},
          {"baseline_s", baseline_s},
          {"sample_rate_hz", sample_rate_hz},
          {"patterns", pats},
          {"style", style == PatternStyle::Local ? "local" : "shift"},
          {"pattern_duration_s", range_json(pattern_duration_s)},
          {"pattern_probability", pattern_probability},
          {"pattern_amplitude", pattern_amplitude},
          {"asynchrony", asynchrony},
          {"decoy_probability", decoy_probability},
          {"decoy_scale", decoy_scale},
          {"noise_sd", {{"ecg", noise_sd.ecg}, {"eda", noise_sd.eda}, {"rsp", noise_sd.rsp}}},
          {"rest_hr_bpm", range_json(rest_hr_bpm)},
          {"task_hr_offset_bpm", range_json(task_hr_offset_bpm)},
          {"hr_fluct_sd_bpm", hr_fluct_sd_bpm},
          {"rsa_bpm", rsa_bpm},
          {"eda_level_us", range_json(eda_level_us)},
          {"eda_drift_sd_us", eda_drift_sd_us},
          {"scr_rate_per_min", scr_rate_per_min},
          {"scr_amp_us", range_json(scr_amp_us)},
          {"rsp_rate_bpm", range_json(rsp_rate_bpm)},
          {"rsp_rate_sd_bpm", rsp_rate_sd_bpm},
          {"rsp_amp", range_json(rsp_amp)},
          {"rsp_amp_sd", rsp_amp_sd},
          {"channel_gain", range_json(channel_gain)},
          {"write_recordings", write_recordings},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const io::Json& j) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  SynthConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "n_cws") c.n_cws = v.get<int>();
      else if (key == "n_cwns") c.n_cwns = v.get<int>();
      else if (key == "windows_per_participant") c.windows_per_participant = v.get<int>();
      else if (key == "baseline_s") c.baseline_s = v.get<double>();
      else if (key == "sample_rate_hz") c.sample_rate_hz = v.get<double>();
      else if (key == "patterns") {
        c.patterns.clear();
        for (const auto& p : v) c.patterns.push_back(parse_pattern_type(p.get<std::string>()));
      } else if (key == "style") {
        const auto s = v.get<std::string>();
        if (s == "local") c.style = PatternStyle::Local;
        else if (s == "shift") c.style = PatternStyle::Shift;
        else throw ConfigError("style must be 'local' or 'shift'");
      } else if (key == "pattern_duration_s") c.pattern_duration_s = parse_range(v);
      else if (key == "pattern_probability") c.pattern_probability = v.get<double>();
      else if (key == "pattern_amplitude") c.pattern_amplitude = v.get<double>();
      else if (key == "asynchrony") c.asynchrony = v.get<bool>();
      else if (key == "decoy_probability") c.decoy_probability = v.get<double>();
      else if (key == "decoy_scale") c.decoy_scale = v.get<double>();
      else if (key == "noise_sd") {
        for (const auto& [ch, x] : v.items()) {
          if (ch == "ecg") c.noise_sd.ecg = x.get<double>();
          else if (ch == "eda") c.noise_sd.eda = x.get<double>();
          else if (ch == "rsp") c.noise_sd.rsp = x.get<double>();
          else throw ConfigError("unknown channel '" + ch + "'");
        }
      } else if (key == "rest_hr_bpm") c.rest_hr_bpm = parse_range(v);
      else if (key == "task_hr_offset_bpm") c.task_hr_offset_bpm = parse_range(v);
      else if (key == "hr_fluct_sd_bpm") c.hr_fluct_sd_bpm = v.get<double>();
      else if (key == "rsa_bpm") c.rsa_bpm = v.get<double>();
      else if (key == "eda_level_us") c.eda_level_us = parse_range(v);
      else if (key == "eda_drift_sd_us") c.eda_drift_sd_us = v.get<double>();
      else if (key == "scr_rate_per_min") c.scr_rate_per_min = v.get<double>();
      else if (key == "scr_amp_us") c.scr_amp_us = parse_range(v);
      else if (key == "rsp_rate_bpm") c.rsp_rate_bpm = parse_range(v);
      else if (key == "rsp_rate_sd_bpm") c.rsp_rate_sd_bpm = v.get<double>();
      else if (key == "rsp_amp") c.rsp_amp = parse_range(v);
      else if (key == "rsp_amp_sd") c.rsp_amp_sd = v.get<double>();
      else if (key == "channel_gain") c.channel_gain = parse_range(v);
      else if (key == "write_recordings") c.write_recordings = v.get<bool>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown key");
    } catch (const ConfigError& e) {
      throw ConfigError("synth config key '" + key + "': " + e.what());
    } catch (const ParameterError& e) {
      throw ConfigError("synth config key '" + key + "': " + e.what());
    } catch (const io::Json::exception& e) {
      throw ConfigError("synth config key '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Ground truth

int WindowTruth::bag_label() const {
  for (const auto& row : labels) {
    for (int v : row) {
      if (v) return 1;
    }
  }
  return 0;
}

bool WindowTruth::planted(Modality m) const {
  const auto& row = labels[static_cast<std::size_t>(m)];
  return std::any_of(row.begin(), row.end(), [](int v) { return v != 0; });
}

io::Json SynthGroundTruth::to_json() const {
  io::Json out = io::Json::object();
  for (const auto& [id, w] : windows) {
    io::Json e = {{"participant_id", w.participant_id},
                  {"group", std::string(signal::to_string(w.group))},
                  {"index", w.index}};
    for (Modality m : features::kModalities) {
      const auto& row = w.labels[static_cast<std::size_t>(m)];
      e[std::string(features::to_string(m))] = std::vector<int>(row.begin(), row.end());
    }
    io::Json pats = io::Json::array();
    for (const auto& p : w.patterns) {
      pats.push_back({{"type", std::string(to_string(p.type))},
                      {"modality", std::string(features::to_string(p.modality))},
                      {"start_s", p.start_s},
                      {"duration_s", p.duration_s},
                      {"amplitude", p.amplitude},
                      {"decoy", p.decoy}});
    }
    e["patterns"] = pats;
    out[id] = e;
  }
  return out;
}

SynthGroundTruth SynthGroundTruth::from_json(const io::Json& j) {
  SynthGroundTruth gt;
  try {
    for (const auto& [id, e] : j.items()) {
      WindowTruth w;
      w.window_id = id;
      w.participant_id = e.at("participant_id").get<std::string>();
      w.group = signal::parse_group(e.at("group").get<std::string>());
      w.index = e.at("index").get<int>();
      for (Modality m : features::kModalities) {
        const auto v = e.at(std::string(features::to_string(m))).get<std::vector<int>>();
        if (v.size() != static_cast<std::size_t>(features::kNumSegments)) {
          throw DataError("ground truth " + id + ": label vector must have 19 entries");
        }
        std::copy(v.begin(), v.end(), w.labels[static_cast<std::size_t>(m)].begin());
      }
      for (const auto& p : e.at("patterns")) {
        PatternDescriptor d;
        d.type = parse_pattern_type(p.at("type").get<std::string>());
        d.modality = features::parse_modality(p.at("modality").get<std::string>());
        d.start_s = p.at("start_s").get<double>();
        d.duration_s = p.at("duration_s").get<double>();
        d.amplitude = p.at("amplitude").get<double>();
        d.decoy = p.at("decoy").get<bool>();
        w.patterns.push_back(d);
      }
      gt.windows.emplace(id, std::move(w));
    }
  } catch (const io::Json::exception& e) {
    throw DataError(std::string("ground truth: ") + e.what());
  }
  return gt;
}

std::array<int, features::kNumSegments> overlap_labels(double start_s, double duration_s) {
  std::array<int, features::kNumSegments> out{};
  if (!(duration_s > 0.0)) return out;
  const double end = start_s + duration_s;
  for (int i = 0; i < features::kNumSegments; ++i) {
    const double lo = std::max(start_s, static_cast<double>(i));
    const double hi = std::min(end, i + 2.0);
    out[static_cast<std::size_t>(i)] = hi - lo > 1e-9 ? 1 : 0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Carriers

namespace {

// Ornstein-Uhlenbeck path on the control grid, linearly upsampled to n samples.
std::vector<double> ou_path(std::size_t n, double fs, double sd, double tau_s, Rng& rng) {
  std::vector<double> out(n, 0.0);
  if (sd <= 0.0 || n == 0) return out;
  const double dt = 1.0 / kControlHz;
  const auto m = static_cast<std::size_t>(std::ceil(static_cast<double>(n) / fs * kControlHz)) + 2;
  std::vector<double> ctrl(m);
  const double a = std::exp(-dt / tau_s);
  const double b = sd * std::sqrt(1.0 - a * a);
  ctrl[0] = sd * rng.normal();
  for (std::size_t k = 1; k < m; ++k) ctrl[k] = a * ctrl[k - 1] + b * rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = static_cast<double>(i) / fs * kControlHz;
    const auto k = static_cast<std::size_t>(pos);
    const double f = pos - static_cast<double>(k);
    out[i] = (1.0 - f) * ctrl[k] + f * ctrl[k + 1];
  }
  return out;
}

struct ParticipantParams {
  double rest_hr = 100.0;
  double task_offset = 0.0;
  double eda_level = 5.0;
  double rsp_rate = 20.0;
  double rsp_amp = 1.0;
  double eda_gain = 1.0;
  double rsp_gain = 1.0;
};

double log_uniform(const Range& r, Rng& rng) {
  return std::exp(rng.uniform(std::log(r.lo), std::log(r.hi)));
}

LatentRecording make_carrier(const std::string& pid, Group group, Condition cond, double duration_s,
                             const ParticipantParams& pp, const SynthConfig& cfg, Rng& rng) {
  const double fs = cfg.sample_rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * fs));
  LatentRecording r;
  r.participant_id = pid;
  r.group = group;
  r.condition = cond;
  r.sample_rate_hz = fs;
  r.eda_gain = pp.eda_gain;
  r.rsp_gain = pp.rsp_gain;
  r.render_seed = rng.next_u64();
  r.eda_noise_sd_us = cfg.noise_sd.eda;

  r.rsp_rate_bpm = ou_path(n, fs, cfg.rsp_rate_sd_bpm, 15.0, rng);
  for (double& v : r.rsp_rate_bpm) v = std::max(6.0, pp.rsp_rate + v);
  r.rsp_amp = ou_path(n, fs, cfg.rsp_amp_sd, 10.0, rng);
  for (double& v : r.rsp_amp) v = pp.rsp_amp * std::max(0.2, 1.0 + v);

  const double offset = cond == Condition::Task ? pp.task_offset : 0.0;
  r.hr_bpm = ou_path(n, fs, cfg.hr_fluct_sd_bpm, 8.0, rng);
  double phase = rng.uniform(0.0, 2.0 * kPi);
  for (std::size_t i = 0; i < n; ++i) {
    phase += 2.0 * kPi * r.rsp_rate_bpm[i] / 60.0 / fs;
    r.hr_bpm[i] += pp.rest_hr + offset + cfg.rsa_bpm * std::sin(phase);
  }
  r.hr_alternans_bpm.assign(n, 0.0);

  r.eda_us = ou_path(n, fs, cfg.eda_drift_sd_us, 30.0, rng);
  for (double& v : r.eda_us) v += pp.eda_level;
  // Spontaneous skin-conductance responses: Poisson onsets, Bateman shape.
  if (cfg.scr_rate_per_min > 0.0) {
    const double rate = cfg.scr_rate_per_min / 60.0;
    const double t_rise = 0.75, t_decay = 4.0;
    const double t_peak = std::log(t_decay / t_rise) * t_rise * t_decay / (t_decay - t_rise);
    const double peak = std::exp(-t_peak / t_decay) - std::exp(-t_peak / t_rise);
    double t = -std::log(1.0 - rng.uniform()) / rate;
    while (t < duration_s) {
      const double amp = rng.uniform(cfg.scr_amp_us.lo, cfg.scr_amp_us.hi);
      const auto i0 = static_cast<std::size_t>(t * fs);
      const auto i1 = std::min(n, i0 + static_cast<std::size_t>(30.0 * fs));
      for (std::size_t i = i0; i < i1; ++i) {
        const double tau = static_cast<double>(i) / fs - t;
        if (tau < 0.0) continue;
        r.eda_us[i] += amp * (std::exp(-tau / t_decay) - std::exp(-tau / t_rise)) / peak;
      }
      t += -std::log(1.0 - rng.uniform()) / rate;
    }
  }
  r.eda_noise_scale.assign(n, 1.0);
  return r;
}

// Plateau with smooth raised-cosine edges of `edge` (fraction of the span).
double plateau(double u, double edge) {
  if (u <= 0.0 || u >= 1.0) return 0.0;
  if (u < edge) return 0.5 - 0.5 * std::cos(kPi * u / edge);
  if (u > 1.0 - edge) return 0.5 - 0.5 * std::cos(kPi * (1.0 - u) / edge);
  return 1.0;
}

}  // namespace

signal::RawRecording render(const LatentRecording& lat, const NoiseSd& noise) {
  Rng rng(lat.render_seed);
  const double fs = lat.sample_rate_hz;
  const std::size_t n = lat.size();
  signal::RawRecording rec;
  rec.participant_id = lat.participant_id;
  rec.group = lat.group;
  rec.condition = lat.condition;
  rec.sample_rate_hz = fs;
  rec.ecg.assign(n, 0.0);
  rec.eda.assign(n, 0.0);
  rec.rsp.assign(n, 0.0);

  // ECG: Gaussian R and T bumps on beat times from the instantaneous rate.
  const double sigma_r = 0.010, sigma_t = 0.040;
  const auto half_r = static_cast<std::ptrdiff_t>(std::ceil(5.0 * sigma_r * fs));
  const auto half_t = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma_t * fs));
  const double dur = static_cast<double>(n) / fs;
  double t = rng.uniform(0.0, 0.6);
  int beat = 0;
  while (t < dur) {
    const auto i = static_cast<std::ptrdiff_t>(t * fs);
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, i - half_r);
         k <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1, i + half_r); ++k) {
      const double d = static_cast<double>(k) / fs - t;
      rec.ecg[static_cast<std::size_t>(k)] += std::exp(-0.5 * d * d / (sigma_r * sigma_r));
    }
    const double tt = t + 0.22;
    const auto it = static_cast<std::ptrdiff_t>(tt * fs);
    for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, it - half_t);
         k <= std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n) - 1, it + half_t); ++k) {
      const double d = static_cast<double>(k) / fs - tt;
      rec.ecg[static_cast<std::size_t>(k)] += 0.25 * std::exp(-0.5 * d * d / (sigma_t * sigma_t));
    }
    const auto idx = static_cast<std::size_t>(std::min<std::ptrdiff_t>(std::max<std::ptrdiff_t>(i, 0),
                                                                       static_cast<std::ptrdiff_t>(n) - 1));
    const double alt = (beat % 2 == 0 ? 1.0 : -1.0) * lat.hr_alternans_bpm[idx];
    const double hr = std::clamp(lat.hr_bpm[idx] + alt, 35.0, 220.0);
    t += 60.0 / hr;
    ++beat;
  }
  const double wander_f = rng.uniform(0.15, 0.3);
  const double wander_ph = rng.uniform(0.0, 2.0 * kPi);
  double phase = rng.uniform(0.0, 2.0 * kPi);
  for (std::size_t i = 0; i < n; ++i) {
    const double ti = static_cast<double>(i) / fs;
    rec.ecg[i] += 0.1 * std::sin(2.0 * kPi * wander_f * ti + wander_ph) + noise.ecg * rng.normal();
    rec.eda[i] = lat.eda_gain * (lat.eda_us[i] + lat.eda_noise_scale[i] * noise.eda * rng.normal());
    phase += 2.0 * kPi * lat.rsp_rate_bpm[i] / 60.0 / fs;
    rec.rsp[i] = lat.rsp_gain * lat.rsp_amp[i] * std::sin(phase) + noise.rsp * rng.normal();
  }
  return rec;
}

std::array<int, features::kNumSegments> plant_pattern(LatentRecording& rec, PatternType type, double start_s,
                                                      double duration_s, double amplitude, Rng& rng,
                                                      double window_start_s, PatternStyle style) {
  if (!(duration_s > 0.0) || start_s < 0.0 || start_s + duration_s > rec.duration_s() + 1e-9) {
    throw ParameterError("plant_pattern: [" + std::to_string(start_s) + ", " +
                         std::to_string(start_s + duration_s) + ") s lies outside the " +
                         std::to_string(rec.duration_s()) + " s recording");
  }
  if (amplitude < 0.0) throw ParameterError("plant_pattern: amplitude must be >= 0");
  if (amplitude == 0.0) return {};
  const double fs = rec.sample_rate_hz;
  const std::size_t n = rec.size();
  const auto i0 = static_cast<std::size_t>(std::llround(start_s * fs));
  const auto i1 = std::min(n, static_cast<std::size_t>(std::llround((start_s + duration_s) * fs)));
  const auto u_at = [&](std::size_t i) { return (static_cast<double>(i) / fs - start_s) / duration_s; };
  if (style == PatternStyle::Shift) {
    // Fixed-size move in a random direction of the (level, spread) plane.
    const double theta = rng.uniform(0.0, kPi);
    const double level = std::cos(theta) * amplitude;
    const double spread = std::sin(theta) * amplitude;
    const double edge = std::min(0.45, 1.0 / duration_s);
    switch (pattern_modality(type)) {
      case Modality::HR: {
        const double d = level * rng.uniform(6.0, 12.0);
        const double a = spread * rng.uniform(4.0, 8.0);
        for (std::size_t i = i0; i < i1; ++i) {
          const double w = plateau(u_at(i), edge);
          rec.hr_bpm[i] += d * w;
          rec.hr_alternans_bpm[i] += a * w;
        }
        break;
      }
      case Modality::EDA: {
        const double d = level * 3.0 * rec.eda_noise_sd_us * rng.uniform(0.8, 1.2);
        const double f = spread * rng.uniform(0.8, 1.2);
        for (std::size_t i = i0; i < i1; ++i) {
          const double w = plateau(u_at(i), edge);
          rec.eda_us[i] += d * w;
          rec.eda_noise_scale[i] *= 1.0 + f * w;
        }
        break;
      }
      default: {
        const double d = level * rng.uniform(3.0, 6.0);
        const double a = spread * rng.uniform(2.0, 4.0);
        const double ph = rng.uniform(0.0, 2.0 * kPi);
        for (std::size_t i = i0; i < i1; ++i) {
          const double w = plateau(u_at(i), edge);
          const double t = static_cast<double>(i) / fs;
          rec.rsp_rate_bpm[i] = std::max(6.0, rec.rsp_rate_bpm[i] + w * (d + a * std::sin(2.0 * kPi * 0.3 * t + ph)));
        }
        break;
      }
    }
    return overlap_labels(start_s - window_start_s, duration_s);
  }

  switch (type) {
    case PatternType::HrFreeze: {
      // Dip over the first 70 %, rebound above baseline over the rest.
      const double dip = rng.uniform(10.0, 20.0) * amplitude;
      for (std::size_t i = i0; i < i1; ++i) {
        const double u = u_at(i);
        rec.hr_bpm[i] += u < 0.7 ? -dip * std::sin(kPi * u / 0.7) : 0.4 * dip * std::sin(kPi * (u - 0.7) / 0.3);
      }
      break;
    }
    case PatternType::HrVarBurst: {
      const double a = rng.uniform(4.0, 8.0) * amplitude;
      for (std::size_t i = i0; i < i1; ++i) rec.hr_alternans_bpm[i] += a * plateau(u_at(i), 0.15);
      break;
    }
    case PatternType::EdaRamp: {
      // Fast rise to a tonic plateau, released at the end of the span.
      const double a = 6.0 * rec.eda_noise_sd_us * rng.uniform(0.8, 1.2) * amplitude;
      for (std::size_t i = i0; i < i1; ++i) rec.eda_us[i] += a * plateau(u_at(i), 0.08);
      break;
    }
    case PatternType::RspRateDrift: {
      const double d = rng.uniform(3.0, 6.0) * amplitude;
      for (std::size_t i = i0; i < i1; ++i) rec.rsp_rate_bpm[i] = std::max(6.0, rec.rsp_rate_bpm[i] + d * plateau(u_at(i), 0.2));
      break;
    }
  }
  return overlap_labels(start_s - window_start_s, duration_s);
}

// ---------------------------------------------------------------------------
// Participants and datasets

ParticipantData generate_participant(Group group, const std::string& participant_id, const SynthConfig& cfg,
                                     Rng& rng) {
  cfg.validate();
  Rng prm = rng.split(0);
  ParticipantParams pp;
  pp.rest_hr = prm.uniform(cfg.rest_hr_bpm.lo, cfg.rest_hr_bpm.hi);
  pp.task_offset = prm.uniform(cfg.task_hr_offset_bpm.lo, cfg.task_hr_offset_bpm.hi);
  pp.eda_level = prm.uniform(cfg.eda_level_us.lo, cfg.eda_level_us.hi);
  pp.rsp_rate = prm.uniform(cfg.rsp_rate_bpm.lo, cfg.rsp_rate_bpm.hi);
  pp.rsp_amp = prm.uniform(cfg.rsp_amp.lo, cfg.rsp_amp.hi);
  pp.eda_gain = log_uniform(cfg.channel_gain, prm);
  pp.rsp_gain = log_uniform(cfg.channel_gain, prm);

  ParticipantData out;
  Rng base_rng = rng.split(1);
  Rng task_rng = rng.split(2);
  Rng pat_rng = rng.split(3);
  const int w = cfg.windows_per_participant;
  out.baseline = make_carrier(participant_id, group, Condition::Baseline, cfg.baseline_s, pp, cfg, base_rng);
  out.task = make_carrier(participant_id, group, Condition::Task, kWindowS + kHopS * (w - 1), pp, cfg, task_rng);

  std::array<std::vector<PatternType>, features::kNumModalities> by_mod;
  for (PatternType t : cfg.patterns) {
    auto& v = by_mod[static_cast<std::size_t>(pattern_modality(t))];
    if (std::find(v.begin(), v.end(), t) == v.end()) v.push_back(t);
  }

  const bool cws = group == Group::CWS;
  for (int k = 0; k < w; ++k) {
    WindowTruth wt;
    wt.participant_id = participant_id;
    wt.window_id = window_id(participant_id, Condition::Task, k);
    wt.group = group;
    wt.index = k;
    const double w0 = kHopS * k;
    // Region owned by this window alone, so patterns never reach a neighbour.
    const double lo = w0 + (k == 0 ? 0.0 : 5.0);
    const double hi = w0 + (k == w - 1 ? kWindowS : 15.0);

    const auto draw_span = [&](double& start, double& dur) {
      if (cfg.style == PatternStyle::Shift) {
        start = lo;
        dur = hi - lo;
        return;
      }
      dur = pat_rng.uniform(cfg.pattern_duration_s.lo, cfg.pattern_duration_s.hi);
      // Whole-second starts keep a <= 5 s pattern within 6 segments.
      const auto slots = static_cast<std::uint64_t>(std::floor(hi - lo - dur)) + 1;
      start = lo + static_cast<double>(pat_rng.below(slots));
    };
    double shared_start = 0.0, shared_dur = 0.0;
    draw_span(shared_start, shared_dur);

    for (Modality m : features::kModalities) {
      const auto& types = by_mod[static_cast<std::size_t>(m)];
      if (types.empty()) continue;
      const double p = cws ? cfg.pattern_probability : cfg.decoy_probability;
      const bool fire = pat_rng.bernoulli(p);
      const PatternType type = types[static_cast<std::size_t>(pat_rng.below(types.size()))];
      double start = shared_start, dur = shared_dur;
      if (cfg.asynchrony) draw_span(start, dur);
      if (!fire) continue;
      const double amp = cfg.pattern_amplitude * (cws ? 1.0 : cfg.decoy_scale);
      if (amp <= 0.0) continue;
      const auto labels = plant_pattern(out.task, type, start, dur, amp, pat_rng, w0, cfg.style);
      if (cws) {
        auto& row = wt.labels[static_cast<std::size_t>(m)];
        for (std::size_t i = 0; i < row.size(); ++i) row[i] = std::max(row[i], labels[i]);
      }
      wt.patterns.push_back({type, m, start - w0, dur, amp, !cws});
    }
    out.truth.push_back(std::move(wt));
  }
  return out;
}

std::vector<Bag> SynthDataset::bags(features::FeatureMode mode) const { return make_bags(windows, mode); }

SynthDataset generate_dataset(const SynthConfig& cfg, const std::optional<fs::path>& out_dir) {
  cfg.validate();
  struct Job {
    Group group;
    std::string id;
  };
  std::vector<Job> jobs;
  const auto name = [](const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%02d", prefix, i);
    return std::string(buf);
  };
  for (int i = 0; i < cfg.n_cws; ++i) jobs.push_back({Group::CWS, name("cws", i)});
  for (int i = 0; i < cfg.n_cwns; ++i) jobs.push_back({Group::CWNS, name("cwns", i)});

  struct Result {
    std::vector<WindowFeatures> windows;
    std::vector<WindowTruth> truth;
    std::vector<signal::RawRecording> recordings;
  };
  std::vector<Result> results(jobs.size());
  const bool keep = cfg.write_recordings && out_dir.has_value();
  parallel_for(jobs.size(), [&](std::size_t i) {
    Rng rng = Rng(cfg.seed).split(i + 1);
    ParticipantData pd = generate_participant(jobs[i].group, jobs[i].id, cfg, rng);
    Result& r = results[i];
    for (const LatentRecording* lat : {&pd.baseline, &pd.task}) {
      signal::RawRecording rec = render(*lat, cfg.noise_sd);
      try {
        auto wins = extract_window_features(rec);
        r.windows.insert(r.windows.end(), std::make_move_iterator(wins.begin()), std::make_move_iterator(wins.end()));
      } catch (const DataError& e) {
        throw DataError("participant " + jobs[i].id + " (" + std::string(signal::to_string(lat->condition)) +
                        "): " + e.what());
      }
      if (keep) r.recordings.push_back(std::move(rec));
    }
    r.truth = std::move(pd.truth);
  });

  SynthDataset ds;
  ds.config = cfg;
  for (auto& r : results) {
    for (auto& w : r.windows) ds.windows.push_back(std::move(w));
    for (auto& t : r.truth) {
      const std::string id = t.window_id;
      ds.truth.windows.emplace(id, std::move(t));
    }
  }

  if (out_dir) {
    fs::create_directories(*out_dir);
    io::write_json(*out_dir / "config.json", cfg.to_json());
    io::write_json(*out_dir / "ground_truth.json", ds.truth.to_json());
    for (auto mode : {features::FeatureMode::Raw, features::FeatureMode::Change, features::FeatureMode::Delta}) {
      save_bags(ds.bags(mode), *out_dir / ("bags_" + std::string(features::to_string(mode)) + ".jsonl"));
    }
    std::vector<signal::ManifestEntry> entries;
    if (keep) {
      for (const auto& r : results) {
        for (const auto& rec : r.recordings) {
          const std::string stem = rec.participant_id + "_" + std::string(signal::to_string(rec.condition));
          const fs::path csv = *out_dir / "recordings" / (stem + ".csv");
          const fs::path meta = *out_dir / "recordings" / (stem + ".json");
          signal::save_recording(rec, csv, meta);
          entries.push_back({meta, csv});
          ds.manifest.push_back(csv);
        }
      }
    }
    signal::save_manifest(entries, *out_dir / "manifest.json");
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Separability oracle

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty()) throw ParameterError("roc_auc: bad input sizes");
  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  double n_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[idx[k]] == 1) {
        rank_sum += avg_rank;
        n_pos += 1.0;
      }
    }
    i = j + 1;
  }
  const double n_neg = static_cast<double>(scores.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw ParameterError("roc_auc: need both classes");
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

std::vector<SeparabilityReport> separability_oracle(std::span<const Bag> bags, const SynthConfig& cfg) {
  if (bags.empty()) throw DataError("separability oracle: no bags");
  const auto mode = bags.front().mode;
  const auto names = features::feature_names(mode);
  std::vector<int> labels;
  for (const Bag& b : bags) labels.push_back(b.label);
  std::vector<SeparabilityReport> out;
  for (Modality m : features::kModalities) {
    const bool planted = std::any_of(cfg.patterns.begin(), cfg.patterns.end(),
                                     [m](PatternType t) { return pattern_modality(t) == m; });
    if (!planted) continue;
    SeparabilityReport best;
    best.modality = m;
    best.auc = 0.0;
    const int off = features::modality_offset(mode, m);
    for (int c = off; c < off + features::modality_width(mode); ++c) {
      std::vector<double> hi, lo;
      for (const Bag& b : bags) {
        hi.push_back(b.features.col(c).maxCoeff());
        lo.push_back(b.features.col(c).minCoeff());
      }
      for (const auto* s : {&hi, &lo}) {
        const double a = roc_auc(*s, labels);
        const double auc = std::max(a, 1.0 - a);
        if (auc > best.auc) {
          best.auc = auc;
          best.column = c;
          best.feature_name = names[static_cast<std::size_t>(c)];
        }
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace mimil::synth
