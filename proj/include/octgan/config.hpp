#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "octgan/phantom.hpp"
#include "octgan/study.hpp"
#include "octgan/superres.hpp"
#include "octgan/train.hpp"

namespace octgan {

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path checkpoint;
  /// Where bookmarked direction labels persist; empty keeps them in memory.
  std::filesystem::path bookmarks;
  /// Study sessions are saved here when set.
  std::filesystem::path study_dir;
  /// Real images for reader studies; phantoms are rendered when empty.
  std::filesystem::path real_dir;
  double psi = 1.0;
};

struct GenerateConfig {
  double psi = 1.0;
  int64_t count = 1;
};

/// One JSON document with a section per module. Unknown keys anywhere are ConfigErrors.
struct AppConfig {
  phantom::DatasetSpec phantom;
  train::TrainConfig train;
  sr::SRConfig sr;
  study::AugmentConfig augment;
  int64_t study_n_each = 50;
  GenerateConfig generate;
  ServeConfig serve;
  std::optional<uint64_t> seed;

  nlohmann::json to_json() const;
  static AppConfig from_json(const nlohmann::json &j);
};

AppConfig load_config(const std::filesystem::path &path);

nlohmann::json dataset_spec_to_json(const phantom::DatasetSpec &spec);
phantom::DatasetSpec dataset_spec_from_json(const nlohmann::json &j);

} // namespace octgan
