#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mimil/features.hpp"
#include "mimil/matrix.hpp"
#include "mimil/signal.hpp"

namespace mimil {

struct ModalityBag {
  features::Modality modality = features::Modality::HR;
  Matrix instances;  // 19 x d
};

// One 20 s window: 19 temporally ordered instances. Label 1 = CWS, 0 = CWNS.
struct Bag {
  std::string participant_id;
  std::string window_id;
  signal::Condition condition = signal::Condition::Task;
  int label = 0;
  features::FeatureMode mode = features::FeatureMode::Raw;
  Matrix features;  // 19 x num_columns(mode)

  ModalityBag modality(features::Modality m) const;
  void validate() const;
};

struct WindowFeatures {
  std::string participant_id;
  std::string window_id;
  signal::Group group = signal::Group::CWNS;
  signal::Condition condition = signal::Condition::Task;
  int index = 0;
  features::RawFeatureMatrix raw;
};

std::string window_id(const std::string& participant_id, signal::Condition c, int index);

// High-pass filters the recording, cuts 20 s windows and extracts the raw grid
// of each.
std::vector<WindowFeatures> extract_window_features(const signal::RawRecording& rec,
                                                    const signal::FilterSpec& filter = {});

// One bag per task window. Change and delta modes use each participant's
// baseline windows; a participant without them raises DataError.
std::vector<Bag> make_bags(std::span<const WindowFeatures> windows, features::FeatureMode mode);

// Featurized bag file: JSON Lines, one bag per line.
std::vector<Bag> load_bags(const std::filesystem::path& path);
void save_bags(const std::vector<Bag>& bags, const std::filesystem::path& path);
std::string bag_to_json_line(const Bag& bag);
Bag bag_from_json_line(const std::string& line);

}  // namespace mimil
