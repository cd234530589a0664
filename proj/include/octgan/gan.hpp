#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "octgan/wavelet.hpp"

namespace octgan::gan {

/// Architecture of the wavelet style generator. The generator predicts Haar coefficients at
/// resolutions base, 2*base, ..., R/2 and the final image is the inverse transform of the last
/// level, so an R x R image needs log2(R/2) - log2(base) + 1 levels.
struct GeneratorConfig {
  int64_t latent_dim = 128;
  int64_t base_resolution = 4;
  int64_t resolution = 64;
  int64_t mapping_depth = 4;
  double mapping_lr_mul = 0.01;
  /// Feature channels per level. Empty means max_channels halving down to min_channels.
  std::vector<int64_t> channels;
  int64_t max_channels = 128;
  int64_t min_channels = 32;

  void validate() const;
  int64_t num_levels() const;
  /// Coefficient resolution of `level` (base * 2^level).
  int64_t level_resolution(int64_t level) const;
  std::vector<int64_t> channel_schedule() const;
  /// Style inputs: two convolutions and one to-wavelet layer per level.
  int64_t num_ws() const { return 3 * num_levels(); }

  nlohmann::json to_json() const;
  static GeneratorConfig from_json(const nlohmann::json &j);
};

struct DiscriminatorConfig {
  int64_t resolution = 64;
  int64_t base_resolution = 4;
  std::vector<int64_t> channels;
  int64_t max_channels = 128;
  int64_t min_channels = 32;
  int64_t mbstd_group = 4;

  void validate() const;
  std::vector<int64_t> channel_schedule() const;

  nlohmann::json to_json() const;
  static DiscriminatorConfig from_json(const nlohmann::json &j);
  /// Mirrors the generator's channel schedule.
  static DiscriminatorConfig matching(const GeneratorConfig &g);
};

/// Modulated convolution. `features` is (N, in, H, W), `styles` is (N, in) and `kernel` is
/// (out, in, k, k) already carrying any runtime weight scaling. Uses "same" padding.
/// With demodulation each output channel is divided by sqrt(sum_{in,k} (s_i W)^2 + 1e-8).
torch::Tensor modulated_conv(const torch::Tensor &features, const torch::Tensor &styles,
                             const torch::Tensor &kernel, bool demodulate);

/// Fully connected layer with runtime weight scaling (equalized learning rate).
class EqualLinearImpl : public torch::nn::Module {
public:
  EqualLinearImpl(int64_t in, int64_t out, double bias_init = 0.0, double lr_mul = 1.0);
  torch::Tensor forward(const torch::Tensor &x);
  /// weight * lr_mul / sqrt(in), shape (out, in).
  torch::Tensor effective_weight() const;

  torch::Tensor weight;
  torch::Tensor bias;

private:
  double scale_;
  double lr_mul_;
};
TORCH_MODULE(EqualLinear);

class EqualConv2dImpl : public torch::nn::Module {
public:
  EqualConv2dImpl(int64_t in, int64_t out, int64_t kernel, bool bias = true);
  torch::Tensor forward(const torch::Tensor &x);

  torch::Tensor weight;
  torch::Tensor bias;

private:
  double scale_;
  int64_t padding_;
};
TORCH_MODULE(EqualConv2d);

/// Style affine + modulated kernel. The affine's weight is the matrix factorized for edits.
class ModulatedConvImpl : public torch::nn::Module {
public:
  ModulatedConvImpl(int64_t in, int64_t out, int64_t kernel, int64_t latent_dim, bool demodulate);
  torch::Tensor forward(const torch::Tensor &x, const torch::Tensor &w);
  torch::Tensor styles(const torch::Tensor &w);

  EqualLinear affine{nullptr};
  torch::Tensor weight;

private:
  double scale_;
  bool demodulate_;
};
TORCH_MODULE(ModulatedConv);

/// How per-pixel noise is produced during synthesis.
struct NoiseSpec {
  enum class Kind { random, seeded, zero } kind = Kind::random;
  uint64_t seed = 0;

  static NoiseSpec random() { return {Kind::random, 0}; }
  static NoiseSpec seeded(uint64_t s) { return {Kind::seeded, s}; }
  static NoiseSpec zero() { return {Kind::zero, 0}; }
};

struct SynthesisOutput {
  torch::Tensor image;                         // (N, 1, R, R)
  std::vector<wavelet::SubbandStack> pyramid;  // accumulated coefficients per level
};

class GeneratorImpl : public torch::nn::Module {
public:
  explicit GeneratorImpl(GeneratorConfig config);

  const GeneratorConfig &config() const { return config_; }

  /// Pixel-normalizes z, runs the mapping MLP and broadcasts to (N, num_ws, D).
  torch::Tensor map_latent(const torch::Tensor &z);
  SynthesisOutput synthesize(const torch::Tensor &ws, const NoiseSpec &noise);
  /// map_latent + synthesize, image only.
  torch::Tensor forward(const torch::Tensor &z, const NoiseSpec &noise);

  /// Effective style-affine matrices (in_channels x D), indexed like the ws axis.
  std::vector<torch::Tensor> style_matrices() const;

private:
  GeneratorConfig config_;
  torch::nn::ModuleList mapping_{nullptr};
  torch::Tensor const_input_;
  std::vector<ModulatedConv> convs_;
  std::vector<torch::Tensor> noise_strength_;
  std::vector<torch::Tensor> conv_bias_;
  std::vector<ModulatedConv> to_wavelet_;
  std::vector<torch::Tensor> to_wavelet_bias_;
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
public:
  explicit DiscriminatorImpl(DiscriminatorConfig config);

  const DiscriminatorConfig &config() const { return config_; }

  /// (N, 1, R, R) -> (N) logits.
  torch::Tensor forward(const torch::Tensor &images);

  /// Last linear layer, exposed so callers can zero it.
  EqualLinear output_layer() const { return out_; }

private:
  DiscriminatorConfig config_;
  EqualConv2d from_wavelet_{nullptr};
  std::vector<EqualConv2d> block_conv_a_;
  std::vector<EqualConv2d> block_conv_b_;
  std::vector<EqualConv2d> block_down_;
  EqualConv2d final_conv_{nullptr};
  EqualLinear final_linear_{nullptr};
  EqualLinear out_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Minibatch standard deviation channel appended to (N, C, H, W).
torch::Tensor minibatch_stddev(const torch::Tensor &x, int64_t group_size);

/// Leaky ReLU (slope 0.2) with sqrt(2) gain.
torch::Tensor scaled_lrelu(const torch::Tensor &x);

/// w' = w_mean + psi (w - w_mean); psi must lie in [0,1].
torch::Tensor truncate_w(const torch::Tensor &ws, double psi, const torch::Tensor &w_mean);

/// Mean mapped latent over n >= 1000 standard-normal samples.
torch::Tensor compute_w_mean(Generator &generator, int64_t n, uint64_t seed);

/// Standard-normal (n, D) latents drawn from a private generator seeded with `seed`.
torch::Tensor sample_z(int64_t n, int64_t latent_dim, uint64_t seed);

/// Copies parameters and buffers by name (shapes must match).
void copy_state(torch::nn::Module &dst, const torch::nn::Module &src);

/// dst = src + beta * (dst - src), parameter-wise.
void ema_update(torch::nn::Module &ema, const torch::nn::Module &current, double beta);

} // namespace octgan::gan
