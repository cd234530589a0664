#include "octgan/metrics.hpp"

#include <algorithm>
#include <limits>
#include <cmath>

#include <ATen/CPUGeneratorImpl.h>
#include <Eigen/Eigenvalues>

#include "octgan/errors.hpp"
#include "octgan/phantom.hpp"

namespace F = torch::nn::functional;

namespace octgan::metrics {

EmbedderKind embedder_kind_from_string(const std::string &s) {
  if (s == "downsample_pca") return EmbedderKind::downsample_pca;
  if (s == "random_conv") return EmbedderKind::random_conv;
  if (s == "external_file") return EmbedderKind::external_file;
  throw ParameterError("unknown embedder kind: " + s);
}

std::string to_string(EmbedderKind k) {
  switch (k) {
  case EmbedderKind::downsample_pca:
    return "downsample_pca";
  case EmbedderKind::random_conv:
    return "random_conv";
  case EmbedderKind::external_file:
    return "external_file";
  }
  return "random_conv";
}

nlohmann::json EmbedderSpec::to_json() const {
  return {{"kind", to_string(kind)},
          {"seed", seed},
          {"output_dim", output_dim},
          {"path", path.string()}};
}

EmbedderSpec EmbedderSpec::from_json(const nlohmann::json &j) {
  EmbedderSpec spec;
  for (const auto &[key, value] : j.items()) {
    if (key == "kind") {
      spec.kind = embedder_kind_from_string(value.get<std::string>());
    } else if (key == "seed") {
      spec.seed = value.get<uint64_t>();
    } else if (key == "output_dim") {
      spec.output_dim = value.get<int64_t>();
    } else if (key == "path") {
      spec.path = value.get<std::string>();
    } else {
      throw ConfigError("unknown embedder config key: " + key);
    }
  }
  return spec;
}

namespace {

constexpr int64_t kPcaGrid = 8;
constexpr int64_t kPcaFitCount = 256;
// Spatial grid the last convolution stage is pooled to before projection.
constexpr int64_t kConvGrid = 4;
constexpr double kPreBlurSigma = 1.0;

torch::Tensor gaussian_kernel(double sigma) {
  const auto r = static_cast<int64_t>(std::ceil(3.0 * sigma));
  auto k = torch::arange(-r, r + 1, torch::kFloat64);
  k = torch::exp(-0.5 * (k / sigma).square());
  return (k / k.sum()).to(torch::kFloat32);
}

torch::Tensor seeded_normal(at::Generator &gen, std::vector<int64_t> shape, double std) {
  return torch::randn(shape, gen, torch::kFloat64).mul(std).to(torch::kFloat32);
}

Eigen::MatrixXd to_eigen(const torch::Tensor &t) {
  auto d = t.detach().to(torch::kFloat64).contiguous();
  Eigen::MatrixXd out(d.size(0), d.size(1));
  const double *p = d.data_ptr<double>();
  for (int64_t i = 0; i < d.size(0); ++i) {
    for (int64_t j = 0; j < d.size(1); ++j) {
      out(i, j) = p[i * d.size(1) + j];
    }
  }
  return out;
}

} // namespace

struct FeatureEmbedder::Impl {
  // Convolutional path (random_conv / external_file).
  std::vector<torch::Tensor> conv_w;
  std::vector<torch::Tensor> conv_b;
  torch::Tensor projection; // (d, C_last * grid^2)
  torch::Tensor blur_kernel = gaussian_kernel(kPreBlurSigma);
  // PCA path.
  torch::Tensor pca_mean;   // (64)
  torch::Tensor pca_basis;  // (64, d)

  torch::Tensor conv_features(const torch::Tensor &x) const {
    auto h = x * 2.0 - 1.0;
    // Separable Gaussian pre-blur so pixel-level speckle does not dominate the features.
    const int64_t r = blur_kernel.size(0) / 2;
    h = F::pad(h, F::PadFuncOptions({r, r, r, r}).mode(torch::kReplicate));
    h = F::conv2d(h, blur_kernel.view({1, 1, 1, -1}));
    h = F::conv2d(h, blur_kernel.view({1, 1, -1, 1}));
    for (size_t i = 0; i < conv_w.size(); ++i) {
      h = F::conv2d(h, conv_w[i], F::Conv2dFuncOptions().stride(2).padding(1).bias(conv_b[i]));
      h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
    }
    h = F::adaptive_avg_pool2d(h, F::AdaptiveAvgPool2dFuncOptions({kConvGrid, kConvGrid})).flatten(1);
    return F::linear(h, projection);
  }

  torch::Tensor pca_features(const torch::Tensor &x) const {
    auto v = F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions({kPcaGrid, kPcaGrid}))
                 .flatten(1);
    return (v - pca_mean).matmul(pca_basis);
  }
};

FeatureEmbedder::FeatureEmbedder(const EmbedderSpec &spec)
    : spec_(spec), impl_(std::make_unique<Impl>()) {
  if (spec_.kind != EmbedderKind::external_file && spec_.output_dim < 2) {
    throw ParameterError("embedder output dimension must be >= 2");
  }
  switch (spec_.kind) {
  case EmbedderKind::random_conv: {
    auto gen = at::detail::createCPUGenerator(spec_.seed);
    const std::vector<int64_t> chans = {1, 16, 32, 64};
    for (size_t i = 0; i + 1 < chans.size(); ++i) {
      const double fan_in = static_cast<double>(chans[i] * 9);
      impl_->conv_w.push_back(
          seeded_normal(gen, {chans[i + 1], chans[i], 3, 3}, std::sqrt(2.0 / fan_in)));
      impl_->conv_b.push_back(seeded_normal(gen, {chans[i + 1]}, 0.1));
    }
    const int64_t flat = chans.back() * kConvGrid * kConvGrid;
    impl_->projection =
        seeded_normal(gen, {spec_.output_dim, flat}, 1.0 / std::sqrt(static_cast<double>(flat)));
    break;
  }
  case EmbedderKind::external_file: {
    const auto ckpt = checkpoint::load_checkpoint(spec_.path);
    if (ckpt.manifest.model_kind != "embedder") {
      throw FormatError("checkpoint is not an embedder: " + spec_.path.string());
    }
    for (int i = 0; ckpt.contains("conv" + std::to_string(i) + ".weight"); ++i) {
      impl_->conv_w.push_back(ckpt.get("conv" + std::to_string(i) + ".weight"));
      impl_->conv_b.push_back(ckpt.get("conv" + std::to_string(i) + ".bias"));
    }
    if (impl_->conv_w.empty()) {
      throw FormatError("embedder checkpoint has no convolution stages");
    }
    impl_->projection = ckpt.get("projection");
    spec_.output_dim = impl_->projection.size(0);
    if (spec_.output_dim < 2) {
      throw ParameterError("embedder output dimension must be >= 2");
    }
    break;
  }
  case EmbedderKind::downsample_pca: {
    const int64_t grid_dim = kPcaGrid * kPcaGrid;
    if (spec_.output_dim > grid_dim) {
      throw ParameterError("downsample_pca output dimension must be <= 64");
    }
    // The basis is fitted on a canonical phantom set derived from the seed.
    phantom::DatasetSpec ds;
    ds.n = kPcaFitCount;
    ds.size = 64;
    auto fit = stack_rasters(phantom::render_dataset(ds, spec_.seed).rasters());
    auto v = F::adaptive_avg_pool2d(fit, F::AdaptiveAvgPool2dFuncOptions({kPcaGrid, kPcaGrid}))
                 .flatten(1);
    const Eigen::MatrixXd x = to_eigen(v);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - mean;
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    auto basis = torch::empty({grid_dim, spec_.output_dim}, torch::kFloat32);
    for (int64_t k = 0; k < spec_.output_dim; ++k) {
      // Eigen sorts ascending; take the largest components first with a fixed sign.
      Eigen::VectorXd col = eig.eigenvectors().col(grid_dim - 1 - k);
      Eigen::Index arg = 0;
      col.cwiseAbs().maxCoeff(&arg);
      if (col(arg) < 0) {
        col = -col;
      }
      for (int64_t i = 0; i < grid_dim; ++i) {
        basis[i][k] = static_cast<float>(col(i));
      }
    }
    auto mean_t = torch::empty({grid_dim}, torch::kFloat32);
    for (int64_t i = 0; i < grid_dim; ++i) {
      mean_t[i] = static_cast<float>(mean(i));
    }
    impl_->pca_mean = mean_t;
    impl_->pca_basis = basis;
    break;
  }
  }
}

FeatureEmbedder::~FeatureEmbedder() = default;
FeatureEmbedder::FeatureEmbedder(FeatureEmbedder &&) noexcept = default;
FeatureEmbedder &FeatureEmbedder::operator=(FeatureEmbedder &&) noexcept = default;

int64_t FeatureEmbedder::dim() const { return spec_.output_dim; }

Eigen::MatrixXd FeatureEmbedder::embed(const torch::Tensor &batch) const {
  if (batch.dim() != 4 || batch.size(1) != 1 || batch.size(0) < 1) {
    throw ShapeError("embed expects a non-empty (N, 1, H, W) batch");
  }
  torch::NoGradGuard guard;
  const auto x = batch.to(torch::kFloat32);
  std::vector<torch::Tensor> parts;
  constexpr int64_t kChunk = 256;
  for (int64_t start = 0; start < x.size(0); start += kChunk) {
    const auto chunk = x.narrow(0, start, std::min(kChunk, x.size(0) - start));
    parts.push_back(spec_.kind == EmbedderKind::downsample_pca ? impl_->pca_features(chunk)
                                                               : impl_->conv_features(chunk));
  }
  const auto feats = torch::cat(parts, 0);
  if (!torch::isfinite(feats).all().item<bool>()) {
    throw NumericError("embedding produced non-finite features");
  }
  return to_eigen(feats);
}

Eigen::MatrixXd FeatureEmbedder::embed(const std::vector<Raster> &images) const {
  if (images.empty()) {
    throw ShapeError("embed needs at least one image");
  }
  return embed(stack_rasters(images));
}

checkpoint::Checkpoint FeatureEmbedder::export_weights() const {
  if (spec_.kind == EmbedderKind::downsample_pca) {
    throw ParameterError("downsample_pca embedders have no convolution weights to export");
  }
  checkpoint::Checkpoint ckpt;
  ckpt.manifest.model_kind = "embedder";
  ckpt.manifest.config = {{"kind", to_string(spec_.kind)},
                          {"seed", spec_.seed},
                          {"output_dim", spec_.output_dim}};
  for (size_t i = 0; i < impl_->conv_w.size(); ++i) {
    ckpt.add("conv" + std::to_string(i) + ".weight", impl_->conv_w[i]);
    ckpt.add("conv" + std::to_string(i) + ".bias", impl_->conv_b[i]);
  }
  ckpt.add("projection", impl_->projection);
  return ckpt;
}

GaussianMoments gaussian_stats(const Eigen::MatrixXd &features) {
  if (features.rows() < 2) {
    throw ParameterError("gaussian_stats needs at least two samples");
  }
  GaussianMoments m;
  m.n = features.rows();
  m.mu = features.colwise().mean().transpose();
  const Eigen::MatrixXd centered = features.rowwise() - m.mu.transpose();
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(m.n - 1);
  m.sigma = 0.5 * (cov + cov.transpose());
  return m;
}

namespace {

constexpr double kEigenFloor = 1e-6;

// Eigendecomposition of a symmetric matrix with negative eigenvalues clamped to zero.
Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> psd_eigen(const Eigen::MatrixXd &m,
                                                         Eigen::VectorXd &clamped) {
  if (m.rows() != m.cols()) {
    throw ShapeError("matrix square root needs a square matrix");
  }
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) {
    throw NumericError("eigendecomposition failed");
  }
  const auto &vals = eig.eigenvalues();
  const double scale = std::max(1.0, vals.cwiseAbs().maxCoeff());
  if (vals.minCoeff() < -kEigenFloor * scale) {
    throw NumericError("matrix is not positive semidefinite (eigenvalue " +
                       std::to_string(vals.minCoeff()) + ")");
  }
  clamped = vals.cwiseMax(0.0);
  return eig;
}

} // namespace

Eigen::MatrixXd sqrtm_psd(const Eigen::MatrixXd &m) {
  Eigen::VectorXd vals;
  auto eig = psd_eigen(m, vals);
  const auto &v = eig.eigenvectors();
  return v * vals.cwiseSqrt().asDiagonal() * v.transpose();
}

double frechet_distance(const GaussianMoments &a, const GaussianMoments &b) {
  if (a.dim() != b.dim() || a.sigma.rows() != a.dim() || b.sigma.rows() != b.dim()) {
    throw ShapeError("moment dimensions differ");
  }
  const double mean_term = (a.mu - b.mu).squaredNorm();
  // Tr((S1 S2)^{1/2}) from either ordering; averaging both keeps the result symmetric.
  auto cross_trace = [](const Eigen::MatrixXd &s1, const Eigen::MatrixXd &s2) {
    const Eigen::MatrixXd root = sqrtm_psd(s1);
    Eigen::VectorXd vals;
    psd_eigen(root * s2 * root, vals);
    // Eigenvalues under the numerical-rank cutoff are rounding noise; their square roots would
    // otherwise inflate the trace when the covariances are rank deficient.
    const double cutoff = static_cast<double>(vals.size()) * std::numeric_limits<double>::epsilon() *
                          std::max(1.0, vals.maxCoeff());
    return (vals.array() > cutoff).select(vals.array().sqrt(), 0.0).sum();
  };
  const double cross = 0.5 * (cross_trace(a.sigma, b.sigma) + cross_trace(b.sigma, a.sigma));
  const double value = mean_term + (a.sigma.trace() + b.sigma.trace()) - 2.0 * cross;
  const double scale = std::max({1.0, a.sigma.trace(), b.sigma.trace(), mean_term});
  if (value < -1e-8 * scale) {
    throw NumericError("Frechet distance is negative beyond numerical tolerance");
  }
  return std::max(0.0, value);
}

double fid(const std::vector<Raster> &set_a, const std::vector<Raster> &set_b,
           const FeatureEmbedder &embedder) {
  if (set_a.size() < 2 || set_b.size() < 2) {
    throw ParameterError("FID needs at least two images per set");
  }
  return frechet_distance(gaussian_stats(embedder.embed(set_a)),
                          gaussian_stats(embedder.embed(set_b)));
}

struct PerceptualDistance::Impl {
  std::vector<torch::Tensor> weights;
  std::vector<torch::Tensor> biases;
  std::vector<int64_t> strides;
};

PerceptualDistance::PerceptualDistance(uint64_t seed) : impl_(std::make_unique<Impl>()) {
  auto gen = at::detail::createCPUGenerator(seed);
  const std::vector<int64_t> chans = {1, 16, 32, 64};
  for (size_t i = 0; i + 1 < chans.size(); ++i) {
    const double fan_in = static_cast<double>(chans[i] * 9);
    impl_->weights.push_back(
        seeded_normal(gen, {chans[i + 1], chans[i], 3, 3}, std::sqrt(2.0 / fan_in)));
    impl_->biases.push_back(seeded_normal(gen, {chans[i + 1]}, 0.1));
    impl_->strides.push_back(i == 0 ? 1 : 2);
  }
}

PerceptualDistance::~PerceptualDistance() = default;
PerceptualDistance::PerceptualDistance(PerceptualDistance &&) noexcept = default;
PerceptualDistance &PerceptualDistance::operator=(PerceptualDistance &&) noexcept = default;

std::vector<torch::Tensor> PerceptualDistance::features(const torch::Tensor &images) const {
  if (images.dim() != 4 || images.size(1) != 1) {
    throw ShapeError("perceptual features expect (N, 1, H, W)");
  }
  std::vector<torch::Tensor> out;
  auto h = images * 2.0 - 1.0;
  for (size_t i = 0; i < impl_->weights.size(); ++i) {
    const auto &w = impl_->weights[i].to(images.dtype());
    const auto &b = impl_->biases[i].to(images.dtype());
    h = F::conv2d(h, w, F::Conv2dFuncOptions().stride(impl_->strides[i]).padding(1).bias(b));
    h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
    out.push_back(h * torch::rsqrt(h.square().sum(1, true) + 1e-10));
  }
  return out;
}

torch::Tensor PerceptualDistance::distance(const torch::Tensor &a, const torch::Tensor &b) const {
  if (a.sizes() != b.sizes()) {
    throw ShapeError("perceptual distance needs images of equal resolution");
  }
  const auto fa = features(a);
  const auto fb = features(b);
  auto total = torch::zeros({a.size(0)}, a.options());
  for (size_t i = 0; i < fa.size(); ++i) {
    total = total + (fa[i] - fb[i]).square().sum(1).mean({1, 2});
  }
  return total;
}

double PerceptualDistance::operator()(const Raster &a, const Raster &b) const {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("perceptual distance needs images of equal resolution");
  }
  torch::NoGradGuard guard;
  const auto ta = a.to_tensor().unsqueeze(0).unsqueeze(0);
  const auto tb = b.to_tensor().unsqueeze(0).unsqueeze(0);
  return distance(ta, tb).item<double>();
}

const PerceptualDistance &default_perceptual() {
  static const PerceptualDistance instance;
  return instance;
}

double perceptual_distance(const Raster &a, const Raster &b) { return default_perceptual()(a, b); }

} // namespace octgan::metrics
