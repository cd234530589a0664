#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "octgan/gan.hpp"
#include "octgan/image.hpp"
#include "octgan/metrics.hpp"
#include "octgan/phantom.hpp"

namespace octgan::train {

struct TrainConfig {
  int64_t iterations = 3000;
  int64_t batch_size = 4;
  double lr = 0.002;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double r1_gamma = 10.0;
  int64_t r1_every = 16;
  int64_t pl_every = 8;
  double pl_decay = 0.01;
  double pl_weight = 2.0;
  int64_t checkpoint_every = 500;
  int64_t fid_sample_count = 1000;
  uint64_t seed = 0;
  bool ema = true;
  /// Generator weight averaging; the effective decay ramps up as min(decay, (1+t)/(10+t)).
  double ema_decay = 0.999;
  gan::GeneratorConfig generator;
  metrics::EmbedderSpec embedder;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json &j);
};

struct PathLengthState {
  double mean = 0.0;
};

/// Logistic non-saturating losses: mean softplus(-r) + mean softplus(f), and mean softplus(-f).
torch::Tensor d_loss(const torch::Tensor &real_logits, const torch::Tensor &fake_logits);
torch::Tensor g_loss(const torch::Tensor &fake_logits);

using DiscriminatorFn = std::function<torch::Tensor(const torch::Tensor &)>;
using SynthesisFn = std::function<torch::Tensor(const torch::Tensor &)>;

/// (gamma/2) * mean over the batch of |grad_x D(x)|^2. Differentiable w.r.t. D's parameters.
torch::Tensor r1_penalty(const torch::Tensor &real_batch, const DiscriminatorFn &discriminator,
                         double gamma);

struct PathLengthResult {
  torch::Tensor penalty;  // scalar, differentiable
  torch::Tensor norms;    // (N), detached
  PathLengthState state;
};

/// Penalty from per-sample norms |J^T y|: mean (norm - a)^2, and a' = a + decay (mean - a).
PathLengthResult path_length_from_norms(const torch::Tensor &norms, const PathLengthState &state,
                                        double decay);

/// `ws` is (N, L, D). Norms are sqrt(mean over L of sum over D of the squared gradient of
/// sum(G(w) * y)), with y ~ N(0,1)/sqrt(H*W) unless `projection` is supplied.
PathLengthResult path_length_penalty(const torch::Tensor &ws, const SynthesisFn &synthesize,
                                     const PathLengthState &state, double decay,
                                     const std::optional<torch::Tensor> &projection = {});

struct MetricsRow {
  int64_t iter = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double r1 = 0.0;
  double pl = 0.0;
  double fid = 0.0;
};

struct CheckpointRecord {
  int64_t iteration = 0;
  std::filesystem::path path;
  double fid = 0.0;
};

struct TrainResult {
  double baseline_fid = 0.0;
  std::vector<CheckpointRecord> checkpoints;
  std::vector<MetricsRow> rows;
  int64_t r1_applications = 0;
  int64_t pl_applications = 0;
  size_t best = 0;
};

inline constexpr const char *kMetricsHeader = "iter,loss_d,loss_g,r1,pl,fid";

/// Runs the adversarial loop, writing out_dir/checkpoints/iter_NNNNNNN.ckpt, out_dir/metrics.csv
/// and out_dir/run.json. Deterministic for a given config and dataset.
TrainResult train(const TrainConfig &config, const std::vector<Raster> &dataset,
                  const std::filesystem::path &out_dir);

/// Index of the smallest FID; ties resolve to the earliest entry.
size_t select_best(const std::vector<double> &fids);

/// Re-scores every checkpoint against `reference` and returns the argmin record.
CheckpointRecord select_best(const std::vector<std::filesystem::path> &checkpoints,
                             const std::vector<Raster> &reference,
                             const metrics::FeatureEmbedder &embedder, int64_t sample_count,
                             uint64_t seed);

std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path &dir);

std::string format_metrics_row(const MetricsRow &row);

} // namespace octgan::train
