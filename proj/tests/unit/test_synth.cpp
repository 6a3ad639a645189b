#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>

#include "mimil/synth.hpp"

using namespace mimil;
using namespace mimil::synth;
using features::Modality;

namespace {

LatentRecording flat_latent(double seconds) {
  LatentRecording r;
  r.participant_id = "t";
  r.condition = signal::Condition::Task;
  const auto n = static_cast<std::size_t>(seconds * r.sample_rate_hz);
  r.hr_bpm.assign(n, 100.0);
  r.hr_alternans_bpm.assign(n, 0.0);
  r.eda_us.assign(n, 5.0);
  r.eda_noise_scale.assign(n, 1.0);
  r.rsp_rate_bpm.assign(n, 18.0);
  r.rsp_amp.assign(n, 1.0);
  r.render_seed = 77;
  return r;
}

features::RawFeatureMatrix window_features(const LatentRecording& lat) {
  const auto rec = render(lat, NoiseSd{});
  return features::raw_features(signal::extract_windows(rec).front());
}

SynthConfig small_config() {
  SynthConfig c;
  c.n_cws = 7;
  c.n_cwns = 7;
  c.windows_per_participant = 3;
  c.baseline_s = 60.0;
  return c;
}

}  // namespace

TEST_CASE("overlap labels") {
  const auto l = overlap_labels(6.0, 3.0);
  std::vector<int> on;
  for (int i = 0; i < 19; ++i) {
    if (l[i]) on.push_back(i);
  }
  CHECK(on == std::vector<int>{5, 6, 7, 8});
  const auto edge = overlap_labels(0.0, 2.0);
  CHECK(edge[0] == 1);
  CHECK(edge[1] == 1);
  CHECK(edge[2] == 0);
}

TEST_CASE("hr_freeze dips the HR mean of the covered segments") {
  LatentRecording lat = flat_latent(20.0);
  Rng rng(1);
  const auto labels = plant_pattern(lat, PatternType::HrFreeze, 6.0, 3.0, 1.0, rng);
  CHECK(std::accumulate(labels.begin(), labels.end(), 0) == 4);
  const auto raw = window_features(lat);
  double pre = 0.0;
  for (int s = 0; s < 4; ++s) pre += raw.grid(s, 0) / 4.0;
  double lowest = 1e9;
  for (int s = 5; s <= 9; ++s) lowest = std::min(lowest, raw.grid(s, 0));
  CHECK(lowest <= pre - 5.0);
}

TEST_CASE("eda_ramp lifts the EDA level inside the pattern only") {
  LatentRecording lat = flat_latent(20.0);
  const auto before = window_features(lat);
  Rng rng(2);
  const auto labels = plant_pattern(lat, PatternType::EdaRamp, 6.0, 4.0, 1.0, rng);
  const auto raw = window_features(lat);
  const int col = features::modality_offset(features::FeatureMode::Raw, Modality::EDA);
  CHECK(labels == overlap_labels(6.0, 4.0));
  for (int s : {6, 7, 8}) CHECK(raw.grid(s, col) > before.grid(s, col) + 0.1);
  for (int s : {1, 12, 16}) CHECK(raw.grid(s, col) == doctest::Approx(before.grid(s, col)).epsilon(1e-9));
}

TEST_CASE("shift patterns move the HR vector away from its resting value") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    LatentRecording lat = flat_latent(20.0);
    const auto before = window_features(lat);
    Rng rng(seed);
    const auto labels = plant_pattern(lat, PatternType::HrFreeze, 5.0, 10.0, 1.0, rng, 0.0, PatternStyle::Shift);
    CHECK(labels == overlap_labels(5.0, 10.0));
    const auto after = window_features(lat);
    // Centre segment of the span, HR block (mean..std).
    const double dist = (after.grid.block(9, 0, 1, 6) - before.grid.block(9, 0, 1, 6)).norm();
    CHECK(dist > 3.0);
    CHECK((after.grid.row(1) - before.grid.row(1)).norm() < 1e-9);
  }
}

TEST_CASE("zero amplitude leaves the recording unchanged") {
  LatentRecording lat = flat_latent(20.0);
  const LatentRecording before = lat;
  Rng rng(3);
  for (auto t : {PatternType::EdaRamp, PatternType::HrFreeze, PatternType::HrVarBurst, PatternType::RspRateDrift}) {
    const auto labels = plant_pattern(lat, t, 4.0, 3.0, 0.0, rng);
    CHECK(std::accumulate(labels.begin(), labels.end(), 0) == 0);
  }
  CHECK(lat.hr_bpm == before.hr_bpm);
  CHECK(lat.eda_us == before.eda_us);
  CHECK(lat.rsp_rate_bpm == before.rsp_rate_bpm);
  CHECK_THROWS_AS(plant_pattern(lat, PatternType::HrFreeze, 18.0, 4.0, 1.0, rng), ParameterError);
}

TEST_CASE("participants are deterministic; truth follows the group") {
  const SynthConfig cfg = small_config();
  Rng a(5), b(5);
  const auto p1 = generate_participant(signal::Group::CWS, "cws_00", cfg, a);
  const auto p2 = generate_participant(signal::Group::CWS, "cws_00", cfg, b);
  const auto r1 = render(p1.task, cfg.noise_sd);
  const auto r2 = render(p2.task, cfg.noise_sd);
  CHECK(r1.ecg == r2.ecg);
  CHECK(r1.eda == r2.eda);
  CHECK(r1.rsp == r2.rsp);
  CHECK(render(p1.baseline, cfg.noise_sd).ecg == render(p2.baseline, cfg.noise_sd).ecg);
  REQUIRE(p1.truth.size() == 3);
  for (const auto& w : p1.truth) {
    CHECK(w.bag_label() == 1);
    CHECK_FALSE(w.patterns.empty());
    for (const auto& row : w.labels) CHECK(std::accumulate(row.begin(), row.end(), 0) <= 6);
  }
  Rng c(6);
  const auto neg = generate_participant(signal::Group::CWNS, "cwns_00", cfg, c);
  for (const auto& w : neg.truth) {
    CHECK(w.bag_label() == 0);
    for (const auto& p : w.patterns) CHECK(p.decoy);
  }
}

TEST_CASE("patterns stay inside their window and within six segments") {
  SynthConfig cfg = small_config();
  cfg.windows_per_participant = 10;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const auto p = generate_participant(signal::Group::CWS, "cws", cfg, rng);
    for (const auto& w : p.truth) {
      for (const auto& d : w.patterns) {
        CHECK(d.start_s >= 0.0);
        CHECK(d.start_s + d.duration_s <= 20.0 + 1e-9);
        CHECK(d.duration_s >= 2.0);
        CHECK(d.duration_s <= 5.0);
        const auto l = overlap_labels(d.start_s, d.duration_s);
        CHECK(std::accumulate(l.begin(), l.end(), 0) <= 6);
      }
      for (Modality m : {Modality::HR, Modality::EDA, Modality::RSP_RATE}) CHECK(w.planted(m));
    }
  }
}

TEST_CASE("dataset size, balance and ground truth file") {
  const SynthConfig cfg = small_config();
  const auto dir = std::filesystem::temp_directory_path() / "mimil_synth_ds";
  std::filesystem::remove_all(dir);
  const auto ds = generate_dataset(cfg, dir);
  const auto bags = ds.bags(features::FeatureMode::Change);
  CHECK(bags.size() == 14u * 3u);
  int pos = 0;
  for (const auto& b : bags) {
    pos += b.label;
    CHECK(b.features.cols() == 8);
    CHECK(ds.truth.windows.at(b.window_id).bag_label() == b.label);
  }
  CHECK(pos == 7 * 3);
  for (const char* f : {"config.json", "ground_truth.json", "bags_raw.jsonl", "bags_change.jsonl", "bags_delta.jsonl",
                        "manifest.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const auto gt = SynthGroundTruth::from_json(io::read_json(dir / "ground_truth.json"));
  CHECK(gt.windows.size() == ds.truth.windows.size());
  CHECK(load_bags(dir / "bags_raw.jsonl").size() == bags.size());

  const auto again = generate_dataset(cfg);
  CHECK(again.bags(features::FeatureMode::Raw)[5].features == ds.bags(features::FeatureMode::Raw)[5].features);
  std::filesystem::remove_all(dir);
}

TEST_CASE("recordings written with the dataset reload into the same bags") {
  SynthConfig cfg = small_config();
  cfg.n_cws = 7;
  cfg.windows_per_participant = 2;
  cfg.baseline_s = 30.0;
  cfg.write_recordings = true;
  const auto dir = std::filesystem::temp_directory_path() / "mimil_synth_rec";
  std::filesystem::remove_all(dir);
  const auto ds = generate_dataset(cfg, dir);
  const auto entries = signal::load_manifest(dir / "manifest.json");
  CHECK(entries.size() == 28);
  std::vector<WindowFeatures> windows;
  for (const auto& e : entries) {
    auto w = extract_window_features(signal::load_recording(e.csv, e.meta), {});
    windows.insert(windows.end(), w.begin(), w.end());
  }
  const auto reloaded = make_bags(windows, features::FeatureMode::Raw);
  const auto direct = ds.bags(features::FeatureMode::Raw);
  REQUIRE(reloaded.size() == direct.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < direct.size(); ++i) {
    CHECK(reloaded[i].window_id == direct[i].window_id);
    worst = std::max(worst, (reloaded[i].features - direct[i].features).cwiseAbs().maxCoeff());
  }
  CHECK(worst < 1e-3);
  std::filesystem::remove_all(dir);
}

TEST_CASE("synth config validation and json") {
  SynthConfig c;
  c.n_cws = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  SynthConfig d;
  d.pattern_duration_s = {1.0, 5.0};
  CHECK_THROWS_AS(d.validate(), ConfigError);
  const SynthConfig back = SynthConfig::from_json(SynthConfig{}.to_json());
  CHECK(back.to_json() == SynthConfig{}.to_json());
  try {
    SynthConfig::from_json({{"n_cws", 20}, {"bogus_key", 1}});
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
  }
}

TEST_CASE("roc auc") {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y = {0, 0, 1, 1};
  CHECK(roc_auc(s, y) == doctest::Approx(0.75));
  const std::vector<double> tie = {0.5, 0.5};
  const std::vector<int> yt = {0, 1};
  CHECK(roc_auc(tie, yt) == doctest::Approx(0.5));
}

TEST_CASE("separability oracle at default amplitudes") {
  const SynthConfig cfg;
  const auto ds = generate_dataset(cfg);
  const auto bags = ds.bags(features::FeatureMode::Raw);
  const auto reports = separability_oracle(bags, cfg);
  REQUIRE(reports.size() == 3);
  double best = 0.0;
  for (const auto& r : reports) {
    INFO(features::to_string(r.modality) << " " << r.feature_name << " auc " << r.auc);
    CHECK(r.auc > 0.5);
    best = std::max(best, r.auc);
  }
  // Strongest planted modality is learnable but not trivially separable.
  CHECK(best >= 0.9);
  CHECK(best <= 0.95);
  // Brute-force threshold sweep on the reported column agrees with the rank statistic.
  for (const auto& r : reports) {
    std::vector<double> hi, lo;
    std::vector<int> y;
    for (const auto& b : bags) {
      hi.push_back(b.features.col(r.column).maxCoeff());
      lo.push_back(b.features.col(r.column).minCoeff());
      y.push_back(b.label);
    }
    double sweep = 0.0;
    for (const auto* s : {&hi, &lo}) {
      std::vector<double> th = *s;
      std::sort(th.begin(), th.end());
      th.push_back(th.back() + 1.0);
      // Area under the empirical ROC built from every threshold.
      double n1 = 0, n0 = 0;
      for (int v : y) (v ? n1 : n0) += 1;
      std::vector<std::pair<double, double>> roc;
      for (double t : th) {
        double tp = 0, fp = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
          if ((*s)[i] >= t) (y[i] ? tp : fp) += 1;
        }
        roc.push_back({fp / n0, tp / n1});
      }
      std::sort(roc.begin(), roc.end());
      double area = 0.0;
      for (std::size_t i = 1; i < roc.size(); ++i) {
        area += (roc[i].first - roc[i - 1].first) * (roc[i].second + roc[i - 1].second) / 2.0;
      }
      sweep = std::max({sweep, area, 1.0 - area});
    }
    CHECK(sweep == doctest::Approx(r.auc).epsilon(1e-9));
  }
}
