#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "octgan/image.hpp"

namespace octgan::phantom {

/// Geometry and appearance of one procedurally rendered cornea B-scan.
///
/// Lengths are in pixels of the output canvas. The anterior and posterior corneal
/// surfaces are circular arcs opening downward; `apex_row` is the anterior apex.
struct PhantomParams {
  int64_t size = 64;
  double anterior_radius = 64.0;
  double posterior_radius = 54.4;
  double corneal_thickness = 5.8;
  double apex_row = 12.8;
  double center_col = 32.0;
  bool has_icl = false;
  bool has_ring_segments = false;
  bool has_eyelid = false;
  bool has_flare = false;
  bool has_haze = false;
  /// Gamma shape of the multiplicative speckle. Infinity disables noise.
  double speckle_shape = 4.0;
  double intensity_scale = 1.0;
  WidthClass width_class = WidthClass::wide16mm;

  /// Defaults proportioned to a canvas of the given size.
  static PhantomParams for_size(int64_t size);

  ConditionFlags flags() const;
  void set_flags(const ConditionFlags &f);

  /// Throws ParameterError when any invariant fails.
  void validate() const;

  /// Row of the anterior/posterior surface in column `col` (fractional).
  double anterior_row(double col) const;
  double posterior_row(double col) const;

  nlohmann::json to_json() const;
  static PhantomParams from_json(const nlohmann::json &j);
};

struct PhantomResult {
  BScanImage image;
  ConditionFlags label;
};

/// Deterministic in (params, seed).
PhantomResult generate_phantom(const PhantomParams &params, uint64_t seed);

/// Independent per-flag probabilities.
using ClassMix = std::map<std::string, double>;

/// Marginal condition frequencies from the clinical survey (ICL 1.2 %, ring segments 11.2 %,
/// laser vision correction 8.0 % rendered as haze) plus artifact rates for eyelid and flare.
ClassMix default_class_mix();

struct DatasetSpec {
  int64_t n = 100;
  ClassMix class_mix = default_class_mix();
  int64_t size = 64;
  WidthClass width_class = WidthClass::wide16mm;
  /// Randomize geometry and appearance per image around `PhantomParams::for_size`.
  bool jitter = true;
};

struct DatasetStats {
  double mean = 0.0;
  double std = 1.0;
  int64_t count = 0;

  nlohmann::json to_json() const;
  static DatasetStats from_json(const nlohmann::json &j);
};

struct Dataset {
  std::vector<BScanImage> images;
  std::vector<std::string> files;
  std::vector<std::string> warnings;

  size_t size() const { return images.size(); }
  std::vector<Raster> rasters() const;
};

/// Per-image parameters drawn for dataset item `index`.
PhantomParams sample_params(const DatasetSpec &spec, uint64_t seed, int64_t index,
                            uint64_t *item_seed = nullptr);

/// Renders the dataset in memory without touching disk.
Dataset render_dataset(const DatasetSpec &spec, uint64_t seed);

/// Writes `images/NNNNNN.png`, `labels.jsonl` and `stats.json` under `dir`.
Dataset generate_dataset(const DatasetSpec &spec, uint64_t seed, const std::filesystem::path &dir);

/// Loads a directory written by `generate_dataset` (labels are optional).
Dataset load_dataset(const std::filesystem::path &dir);

/// Loads every decodable image in `path`, bicubic-resized to target x target.
/// Undecodable files are skipped and reported in `Dataset::warnings`.
Dataset ingest_folder(const std::filesystem::path &path, int64_t target_size);

DatasetStats compute_stats(const std::vector<BScanImage> &images);
DatasetStats compute_stats(const std::vector<Raster> &images);

Raster normalize(const Raster &image, const DatasetStats &stats);
Raster denormalize(const Raster &image, const DatasetStats &stats);
torch::Tensor normalize(const torch::Tensor &images, const DatasetStats &stats);
torch::Tensor denormalize(const torch::Tensor &images, const DatasetStats &stats);

} // namespace octgan::phantom
