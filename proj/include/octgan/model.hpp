#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "octgan/checkpoint.hpp"
#include "octgan/gan.hpp"
#include "octgan/image.hpp"
#include "octgan/phantom.hpp"

namespace octgan {

/// A trained generator ready for inference: weights, data statistics and the mean latent.
struct GanModel {
  gan::GeneratorConfig config;
  gan::Generator generator{nullptr};
  phantom::DatasetStats stats;
  torch::Tensor w_mean;
  int64_t iteration = 0;
  nlohmann::json metric_history = nlohmann::json::array();
};

/// Packs the inference generator (stored as "g_ema.*"), w_mean and stats into a checkpoint.
/// Callers may append training state under other prefixes.
checkpoint::Checkpoint make_gan_checkpoint(const gan::GeneratorConfig &config,
                                           const gan::Generator &inference_generator,
                                           const phantom::DatasetStats &stats,
                                           const torch::Tensor &w_mean, int64_t iteration,
                                           const nlohmann::json &train_config);

GanModel load_gan_model(const checkpoint::Checkpoint &ckpt);
GanModel load_gan_model(const std::filesystem::path &path);

/// Mapped (and optionally truncated) latent for a seed: (1, num_ws, D).
torch::Tensor latent_for_seed(GanModel &model, uint64_t seed, double psi = 1.0);

/// Synthesizes one image with noise fixed by `noise_seed`, mapped back to [0,1].
Raster render_ws(GanModel &model, const torch::Tensor &ws, uint64_t noise_seed);
Raster render_seed(GanModel &model, uint64_t seed, double psi = 1.0);

/// Batched sampling for metrics: (n, 1, R, R) in [0,1], deterministic in `seed`.
torch::Tensor sample_images(gan::Generator &generator, const phantom::DatasetStats &stats,
                            int64_t n, uint64_t seed);

} // namespace octgan
