#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "octgan/checkpoint.hpp"
#include "octgan/image.hpp"
#include "octgan/resample.hpp"

namespace octgan::sr {

struct PatchSet {
  int64_t size = 0;
  std::vector<Raster> patches;
  std::vector<int64_t> source_ids;
  std::vector<std::pair<int64_t, int64_t>> offsets;  // (row, col) of the top-left corner

  size_t count() const { return patches.size(); }
  void append(const PatchSet &other);
};

/// Every aligned S x S window at the given stride.
PatchSet extract_patches(const Raster &image, int64_t size, int64_t stride, int64_t source_id = 0);
PatchSet extract_patches(const std::vector<Raster> &images, int64_t size, int64_t stride);

/// Keeps patches whose mean pixel value exceeds tau. tau must lie in [0, 1).
PatchSet filter_patches(const PatchSet &set, double tau);

/// Integer-factor upsampling with half-pixel centers: Catmull-Rom bicubic, Lanczos-3.
Raster upsample_classical(const Raster &image, int64_t factor, resample::Kernel kind);
Raster upsample_classical(const Raster &image, int64_t factor, const std::string &kind);

/// Halves both dimensions. Bicubic and Lanczos stretch the kernel to filter out aliasing;
/// bilinear reduces to the 2x2 block mean and nearest picks one pixel per block.
Raster downsample2x(const Raster &image, resample::Kernel kind = resample::Kernel::bicubic);

struct SRConfig {
  int64_t scale = 2;
  int64_t patch_size = 32;
  double mean_threshold = 0.05;
  int64_t blocks = 3;
  int64_t features = 32;
  int64_t growth = 16;
  int64_t layers_per_block = 3;
  /// Multiplier on the learned branch; 0 reduces the network to its bilinear skip.
  double res_scale = 1.0;
  int64_t iterations = 5000;
  int64_t batch_size = 16;
  double lr = 5e-4;
  double l1_weight = 1.0;
  double perceptual_weight = 1.0;
  int64_t checkpoint_every = 1000;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SRConfig from_json(const nlohmann::json &j);
};

/// Residual dense network predicting a correction on top of a bilinear 2x upsample.
class ResidualDenseNetImpl : public torch::nn::Module {
public:
  explicit ResidualDenseNetImpl(const SRConfig &config);

  /// (N, 1, h, w) in [0,1] -> (N, 1, 2h, 2w), unclamped.
  torch::Tensor forward(const torch::Tensor &x);

private:
  struct Block {
    std::vector<torch::nn::Conv2d> dense;
    torch::nn::Conv2d fuse{nullptr};
  };

  double res_scale_;
  torch::nn::Conv2d shallow_{nullptr};
  std::vector<Block> blocks_;
  torch::nn::Conv2d global_fuse_{nullptr};
  torch::nn::Conv2d global_conv_{nullptr};
  torch::nn::Conv2d upsample_conv_{nullptr};
  torch::nn::Conv2d output_conv_{nullptr};
};
TORCH_MODULE(ResidualDenseNet);

struct SrModel {
  SRConfig config;
  ResidualDenseNet net{nullptr};
  int64_t iteration = 0;
};

checkpoint::Checkpoint make_sr_checkpoint(const SRConfig &config, const ResidualDenseNet &net,
                                          int64_t iteration);
SrModel load_sr_model(const checkpoint::Checkpoint &ckpt);
SrModel load_sr_model(const std::filesystem::path &path);

/// 2x super-resolution clamped to [0,1].
Raster sr_upscale(const SrModel &model, const Raster &image);
torch::Tensor sr_upscale(const SrModel &model, const torch::Tensor &batch);

struct SrCheckpointRecord {
  int64_t iteration = 0;
  std::filesystem::path path;
  double val_perceptual = 0.0;
  double val_l1 = 0.0;
};

struct SrMetricsRow {
  int64_t iter = 0;
  double loss = 0.0;
  double l1 = 0.0;
  double perceptual = 0.0;
  double val_perceptual = 0.0;
  double val_l1 = 0.0;
};

inline constexpr const char *kSrMetricsHeader = "iter,loss,l1,perceptual,val_perceptual,val_l1";
std::string format_sr_row(const SrMetricsRow &row);

struct SrTrainResult {
  std::vector<SrCheckpointRecord> checkpoints;
  std::vector<SrMetricsRow> rows;
  size_t best = 0;
  /// Bilinear upsampling scored on the same validation pairs.
  double bilinear_val_perceptual = 0.0;
  double bilinear_val_l1 = 0.0;
};

/// Trains on filtered patches of `train_images` and scores every checkpoint on `val_images`
/// (downsampled 2x, restored, compared with the original). Writes metrics.csv, run.json and
/// checkpoints/ under `out_dir`.
SrTrainResult train_sr(const std::vector<Raster> &train_images,
                       const std::vector<Raster> &val_images, const SRConfig &config,
                       const std::filesystem::path &out_dir);

struct ComparisonRow {
  std::string method;
  double mean_perceptual = 0.0;
  double std = 0.0;
};

using Reconstructor = std::function<Raster(const Raster &original)>;

/// Mean and sample standard deviation of perceptual_distance(original, reconstruct(original)).
ComparisonRow score_method(const std::string &method, const std::vector<Raster> &val_set,
                           const Reconstructor &reconstruct);

/// Downsample 2x (bicubic), restore with each classical kernel, score against the original.
std::vector<ComparisonRow> compare_classical(const std::vector<Raster> &val_set);
/// compare_classical plus an "sr" row.
std::vector<ComparisonRow> compare_upsamplers(const std::vector<Raster> &val_set,
                                              const SrModel &model);

inline constexpr const char *kComparisonHeader = "method,mean_perceptual,std";
void write_comparison_csv(const std::filesystem::path &path,
                          const std::vector<ComparisonRow> &rows);

} // namespace octgan::sr
