#include "mimil/bag.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "mimil/common.hpp"
#include "mimil/io.hpp"

namespace mimil {

using features::FeatureMode;

ModalityBag Bag::modality(features::Modality m) const {
  const int off = features::modality_offset(mode, m);
  const int w = features::modality_width(mode);
  return {m, features.middleCols(off, w)};
}

void Bag::validate() const {
  if (features.rows() != features::kNumSegments) {
    throw DataError("bag " + window_id + ": expected " + std::to_string(features::kNumSegments) +
                    " instances, got " + std::to_string(features.rows()));
  }
  if (features.cols() != features::num_columns(mode)) {
    throw DataError("bag " + window_id + ": feature mode '" + std::string(features::to_string(mode)) +
                    "' needs " + std::to_string(features::num_columns(mode)) + " columns, got " +
                    std::to_string(features.cols()));
  }
  if (label != 0 && label != 1) throw DataError("bag " + window_id + ": label must be 0 or 1");
  if (!features.allFinite()) throw DataError("bag " + window_id + ": non-finite feature value");
}

std::string bag_to_json_line(const Bag& bag) {
  std::vector<double> flat(bag.features.data(), bag.features.data() + bag.features.size());
  io::Json j = {{"participant_id", bag.participant_id},
                {"window_id", bag.window_id},
                {"condition", std::string(signal::to_string(bag.condition))},
                {"label", bag.label},
                {"feature_mode", std::string(features::to_string(bag.mode))},
                {"matrix", flat},
                {"n_rows", bag.features.rows()},
                {"n_cols", bag.features.cols()}};
  return j.dump();
}

Bag bag_from_json_line(const std::string& line) {
  io::Json j;
  try {
    j = io::Json::parse(line);
  } catch (const io::Json::parse_error& e) {
    throw DataError(std::string("malformed bag line: ") + e.what());
  }
  Bag b;
  try {
    b.participant_id = j.at("participant_id").get<std::string>();
    b.window_id = j.at("window_id").get<std::string>();
    b.condition = signal::parse_condition(j.value("condition", std::string("task")));
    b.label = j.at("label").get<int>();
    b.mode = features::parse_feature_mode(j.at("feature_mode").get<std::string>());
    const auto rows = j.at("n_rows").get<Eigen::Index>();
    const auto cols = j.at("n_cols").get<Eigen::Index>();
    const auto flat = j.at("matrix").get<std::vector<double>>();
    if (rows <= 0 || cols <= 0 || static_cast<std::size_t>(rows * cols) != flat.size()) {
      throw DataError("bag " + b.window_id + ": matrix length does not match n_rows x n_cols");
    }
    b.features = Eigen::Map<const Matrix>(flat.data(), rows, cols);
  } catch (const io::Json::exception& e) {
    throw DataError(std::string("bag line: ") + e.what());
  } catch (const ParameterError& e) {
    throw DataError(std::string("bag line: ") + e.what());
  }
  b.validate();
  return b;
}

std::string window_id(const std::string& participant_id, signal::Condition c, int index) {
  return participant_id + "-" + std::string(signal::to_string(c)) + "-w" + std::to_string(index);
}

std::vector<WindowFeatures> extract_window_features(const signal::RawRecording& rec,
                                                    const signal::FilterSpec& filter) {
  const signal::RawRecording clean = signal::preprocess(rec, filter);
  std::vector<WindowFeatures> out;
  for (const signal::Window& w : signal::extract_windows(clean)) {
    WindowFeatures wf;
    wf.participant_id = rec.participant_id;
    wf.window_id = window_id(rec.participant_id, rec.condition, w.index);
    wf.group = rec.group;
    wf.condition = rec.condition;
    wf.index = w.index;
    wf.raw = features::raw_features(w);
    out.push_back(std::move(wf));
  }
  return out;
}

std::vector<Bag> make_bags(std::span<const WindowFeatures> windows, FeatureMode mode) {
  std::map<std::string, features::BaselineScore> baselines;
  if (mode != FeatureMode::Raw) {
    std::map<std::string, std::vector<features::RawFeatureMatrix>> base_rows;
    for (const auto& w : windows) {
      if (w.condition == signal::Condition::Baseline) base_rows[w.participant_id].push_back(w.raw);
    }
    for (const auto& [pid, rows] : base_rows) baselines.emplace(pid, features::baseline_score(pid, rows));
  }
  std::vector<Bag> out;
  for (const auto& w : windows) {
    if (w.condition != signal::Condition::Task) continue;
    const features::BaselineScore* base = nullptr;
    if (mode != FeatureMode::Raw) {
      const auto it = baselines.find(w.participant_id);
      if (it == baselines.end()) {
        throw DataError("participant " + w.participant_id + ": no baseline recording for " +
                        std::string(features::to_string(mode)) + " features");
      }
      base = &it->second;
    }
    Bag b;
    b.participant_id = w.participant_id;
    b.window_id = w.window_id;
    b.condition = w.condition;
    b.label = signal::group_label(w.group);
    b.mode = mode;
    b.features = features::featurize(w.raw, mode, base);
    out.push_back(std::move(b));
  }
  return out;
}

std::vector<Bag> load_bags(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Bag> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(bag_from_json_line(line));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void save_bags(const std::vector<Bag>& bags, const std::filesystem::path& path) {
  std::string text;
  for (const Bag& b : bags) {
    text += bag_to_json_line(b);
    text += '\n';
  }
  io::write_text(path, text);
}

}  // namespace mimil
