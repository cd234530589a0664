#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "octgan/checkpoint.hpp"
#include "octgan/image.hpp"

namespace octgan::metrics {

/// Sample mean and unbiased covariance of a feature matrix.
struct GaussianMoments {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;
  int64_t n = 0;

  int64_t dim() const { return mu.size(); }
};

enum class EmbedderKind { downsample_pca, random_conv, external_file };

EmbedderKind embedder_kind_from_string(const std::string &s);
std::string to_string(EmbedderKind k);

struct EmbedderSpec {
  EmbedderKind kind = EmbedderKind::random_conv;
  uint64_t seed = 0;
  int64_t output_dim = 64;
  /// Named-tensor checkpoint for `external_file`.
  std::filesystem::path path;

  nlohmann::json to_json() const;
  static EmbedderSpec from_json(const nlohmann::json &j);
};

/// Maps images to fixed-length feature vectors for Frechet distance computations.
/// Deterministic for a given spec; images in one call must share a resolution.
class FeatureEmbedder {
public:
  explicit FeatureEmbedder(const EmbedderSpec &spec);
  ~FeatureEmbedder();
  FeatureEmbedder(FeatureEmbedder &&) noexcept;
  FeatureEmbedder &operator=(FeatureEmbedder &&) noexcept;

  const EmbedderSpec &spec() const { return spec_; }
  int64_t dim() const;

  /// n x d feature matrix.
  Eigen::MatrixXd embed(const std::vector<Raster> &images) const;
  /// `batch` is (N, 1, H, W) with pixels in [0,1].
  Eigen::MatrixXd embed(const torch::Tensor &batch) const;

  /// Convolutional embedders export their weights in the checkpoint container (kind "embedder").
  checkpoint::Checkpoint export_weights() const;

private:
  struct Impl;
  EmbedderSpec spec_;
  std::unique_ptr<Impl> impl_;
};

/// mu = column means, sigma = unbiased covariance symmetrized as (S + S^T) / 2. Needs n >= 2.
GaussianMoments gaussian_stats(const Eigen::MatrixXd &features);

/// Principal square root of a symmetric PSD matrix via eigendecomposition. Eigenvalues down
/// to -1e-6 (relative to the largest magnitude) are clamped to zero; lower ones raise NumericError.
Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd &m);

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), where the cross term is evaluated on the
/// symmetric form S1^{1/2} S2 S1^{1/2}.
double frechet_distance(const GaussianMoments &a, const GaussianMoments &b);

double fid(const std::vector<Raster> &set_a, const std::vector<Raster> &set_b,
           const FeatureEmbedder &embedder);

/// Perceptual (LPIPS-style) distance with a fixed random three-stage convolution stack.
/// Features are unit-normalized over channels at each location; the distance is the sum over
/// stages of the spatial mean of squared feature differences.
class PerceptualDistance {
public:
  explicit PerceptualDistance(uint64_t seed = 0x1e7f5);
  ~PerceptualDistance();
  PerceptualDistance(PerceptualDistance &&) noexcept;
  PerceptualDistance &operator=(PerceptualDistance &&) noexcept;

  /// Per-sample distance of two (N, 1, H, W) batches; differentiable.
  torch::Tensor distance(const torch::Tensor &a, const torch::Tensor &b) const;
  double operator()(const Raster &a, const Raster &b) const;

  /// Unit-normalized feature maps for each stage.
  std::vector<torch::Tensor> features(const torch::Tensor &images) const;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Shared default instance.
const PerceptualDistance &default_perceptual();
double perceptual_distance(const Raster &a, const Raster &b);

} // namespace octgan::metrics
