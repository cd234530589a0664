#include "octgan/gan.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "octgan/errors.hpp"

namespace F = torch::nn::functional;

namespace octgan::gan {

namespace {

bool is_pow2(int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

int64_t log2_int(int64_t v) {
  int64_t r = 0;
  while (v > 1) {
    v >>= 1;
    ++r;
  }
  return r;
}

std::vector<int64_t> halving_schedule(int64_t levels, int64_t max_ch, int64_t min_ch) {
  std::vector<int64_t> out;
  for (int64_t l = 0; l < levels; ++l) {
    out.push_back(std::max(min_ch, max_ch >> l));
  }
  return out;
}

int64_t levels_for(int64_t resolution, int64_t base) {
  return log2_int(resolution / 2) - log2_int(base) + 1;
}

void check_resolution(int64_t resolution, int64_t base) {
  if (resolution < 8 || !is_pow2(resolution)) {
    throw ParameterError("resolution must be a power of two >= 8");
  }
  if (!is_pow2(base) || base < 1 || base > resolution / 2) {
    throw ParameterError("base resolution must be a power of two <= resolution / 2");
  }
}

void check_channels(const std::vector<int64_t> &channels, int64_t levels) {
  if (!channels.empty() && static_cast<int64_t>(channels.size()) != levels) {
    throw ParameterError("channel schedule must have one entry per level");
  }
  for (auto c : channels) {
    if (c < 1) {
      throw ParameterError("channel counts must be >= 1");
    }
  }
}

} // namespace

void GeneratorConfig::validate() const {
  check_resolution(resolution, base_resolution);
  if (latent_dim < 1 || mapping_depth < 0) {
    throw ParameterError("latent_dim must be >= 1 and mapping_depth >= 0");
  }
  if (!(mapping_lr_mul > 0.0)) {
    throw ParameterError("mapping_lr_mul must be positive");
  }
  if (max_channels < 1 || min_channels < 1) {
    throw ParameterError("channel bounds must be >= 1");
  }
  check_channels(channels, num_levels());
}

int64_t GeneratorConfig::num_levels() const { return levels_for(resolution, base_resolution); }

int64_t GeneratorConfig::level_resolution(int64_t level) const {
  return base_resolution << level;
}

std::vector<int64_t> GeneratorConfig::channel_schedule() const {
  return channels.empty() ? halving_schedule(num_levels(), max_channels, min_channels) : channels;
}

nlohmann::json GeneratorConfig::to_json() const {
  return {{"latent_dim", latent_dim},       {"base_resolution", base_resolution},
          {"resolution", resolution},       {"mapping_depth", mapping_depth},
          {"mapping_lr_mul", mapping_lr_mul}, {"channels", channels},
          {"max_channels", max_channels},   {"min_channels", min_channels}};
}

GeneratorConfig GeneratorConfig::from_json(const nlohmann::json &j) {
  GeneratorConfig c;
  for (const auto &[key, value] : j.items()) {
    if (key == "latent_dim") {
      c.latent_dim = value.get<int64_t>();
    } else if (key == "base_resolution") {
      c.base_resolution = value.get<int64_t>();
    } else if (key == "resolution") {
      c.resolution = value.get<int64_t>();
    } else if (key == "mapping_depth") {
      c.mapping_depth = value.get<int64_t>();
    } else if (key == "mapping_lr_mul") {
      c.mapping_lr_mul = value.get<double>();
    } else if (key == "channels") {
      c.channels = value.get<std::vector<int64_t>>();
    } else if (key == "max_channels") {
      c.max_channels = value.get<int64_t>();
    } else if (key == "min_channels") {
      c.min_channels = value.get<int64_t>();
    } else {
      throw ConfigError("unknown generator config key: " + key);
    }
  }
  c.validate();
  return c;
}

void DiscriminatorConfig::validate() const {
  check_resolution(resolution, base_resolution);
  if (mbstd_group < 1) {
    throw ParameterError("mbstd_group must be >= 1");
  }
  check_channels(channels, levels_for(resolution, base_resolution));
}

std::vector<int64_t> DiscriminatorConfig::channel_schedule() const {
  return channels.empty()
             ? halving_schedule(levels_for(resolution, base_resolution), max_channels, min_channels)
             : channels;
}

nlohmann::json DiscriminatorConfig::to_json() const {
  return {{"resolution", resolution},     {"base_resolution", base_resolution},
          {"channels", channels},         {"max_channels", max_channels},
          {"min_channels", min_channels}, {"mbstd_group", mbstd_group}};
}

DiscriminatorConfig DiscriminatorConfig::from_json(const nlohmann::json &j) {
  DiscriminatorConfig c;
  for (const auto &[key, value] : j.items()) {
    if (key == "resolution") {
      c.resolution = value.get<int64_t>();
    } else if (key == "base_resolution") {
      c.base_resolution = value.get<int64_t>();
    } else if (key == "channels") {
      c.channels = value.get<std::vector<int64_t>>();
    } else if (key == "max_channels") {
      c.max_channels = value.get<int64_t>();
    } else if (key == "min_channels") {
      c.min_channels = value.get<int64_t>();
    } else if (key == "mbstd_group") {
      c.mbstd_group = value.get<int64_t>();
    } else {
      throw ConfigError("unknown discriminator config key: " + key);
    }
  }
  c.validate();
  return c;
}

DiscriminatorConfig DiscriminatorConfig::matching(const GeneratorConfig &g) {
  DiscriminatorConfig d;
  d.resolution = g.resolution;
  d.base_resolution = g.base_resolution;
  d.channels = g.channels;
  d.max_channels = g.max_channels;
  d.min_channels = g.min_channels;
  return d;
}

torch::Tensor modulated_conv(const torch::Tensor &features, const torch::Tensor &styles,
                             const torch::Tensor &kernel, bool demodulate) {
  if (features.dim() != 4 || styles.dim() != 2 || kernel.dim() != 4) {
    throw ShapeError("modulated_conv expects (N,in,H,W), (N,in), (out,in,k,k)");
  }
  const auto n = features.size(0);
  const auto in = features.size(1);
  if (styles.size(0) != n || styles.size(1) != in || kernel.size(1) != in) {
    throw ShapeError("modulated_conv: style length must equal input channels");
  }
  if (kernel.size(2) != kernel.size(3) || kernel.size(2) % 2 == 0) {
    throw ShapeError("modulated_conv: kernel must be square with odd size");
  }
  // Scaling inputs by s before a shared convolution equals convolving with W_ij * s_i.
  auto x = features * styles.unsqueeze(-1).unsqueeze(-1);
  auto y = F::conv2d(x, kernel, F::Conv2dFuncOptions().padding(kernel.size(2) / 2));
  if (demodulate) {
    // sum_{i,k} (s_i W_oik)^2 = sum_i s_i^2 * sum_k W_oik^2
    auto w_sq = kernel.square().sum({2, 3});           // (out, in)
    auto energy = styles.square().matmul(w_sq.t());    // (N, out)
    auto demod = torch::rsqrt(energy + 1e-8);
    y = y * demod.unsqueeze(-1).unsqueeze(-1);
  }
  return y;
}

torch::Tensor scaled_lrelu(const torch::Tensor &x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)) * std::sqrt(2.0);
}

EqualLinearImpl::EqualLinearImpl(int64_t in, int64_t out, double bias_init, double lr_mul)
    : scale_(lr_mul / std::sqrt(static_cast<double>(in))), lr_mul_(lr_mul) {
  weight = register_parameter("weight", torch::randn({out, in}) / lr_mul);
  bias = register_parameter("bias", torch::full({out}, bias_init / lr_mul));
}

torch::Tensor EqualLinearImpl::effective_weight() const { return weight * scale_; }

torch::Tensor EqualLinearImpl::forward(const torch::Tensor &x) {
  return F::linear(x, weight * scale_, bias * lr_mul_);
}

EqualConv2dImpl::EqualConv2dImpl(int64_t in, int64_t out, int64_t kernel, bool use_bias)
    : scale_(1.0 / std::sqrt(static_cast<double>(in * kernel * kernel))), padding_(kernel / 2) {
  weight = register_parameter("weight", torch::randn({out, in, kernel, kernel}));
  if (use_bias) {
    bias = register_parameter("bias", torch::zeros({out}));
  }
}

torch::Tensor EqualConv2dImpl::forward(const torch::Tensor &x) {
  return F::conv2d(x, weight * scale_,
                   F::Conv2dFuncOptions().padding(padding_).bias(bias.defined() ? bias : torch::Tensor()));
}

ModulatedConvImpl::ModulatedConvImpl(int64_t in, int64_t out, int64_t kernel, int64_t latent_dim,
                                     bool demodulate)
    : scale_(1.0 / std::sqrt(static_cast<double>(in * kernel * kernel))), demodulate_(demodulate) {
  affine = register_module("affine", EqualLinear(latent_dim, in, /*bias_init=*/1.0));
  weight = register_parameter("weight", torch::randn({out, in, kernel, kernel}));
}

torch::Tensor ModulatedConvImpl::styles(const torch::Tensor &w) { return affine->forward(w); }

torch::Tensor ModulatedConvImpl::forward(const torch::Tensor &x, const torch::Tensor &w) {
  return modulated_conv(x, styles(w), weight * scale_, demodulate_);
}

GeneratorImpl::GeneratorImpl(GeneratorConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto d = config_.latent_dim;
  const auto schedule = config_.channel_schedule();
  const auto levels = config_.num_levels();

  mapping_ = register_module("mapping", torch::nn::ModuleList());
  for (int64_t i = 0; i < config_.mapping_depth; ++i) {
    mapping_->push_back(EqualLinear(d, d, 0.0, config_.mapping_lr_mul));
  }

  const auto base = config_.base_resolution;
  const_input_ = register_parameter("const_input", torch::randn({1, schedule[0], base, base}));

  for (int64_t l = 0; l < levels; ++l) {
    const auto in_ch = l == 0 ? schedule[0] : schedule[static_cast<size_t>(l - 1)];
    const auto ch = schedule[static_cast<size_t>(l)];
    const std::string p = "level" + std::to_string(l);
    convs_.push_back(register_module(p + "_conv_a", ModulatedConv(in_ch, ch, 3, d, true)));
    convs_.push_back(register_module(p + "_conv_b", ModulatedConv(ch, ch, 3, d, true)));
    for (const char *suffix : {"_a", "_b"}) {
      noise_strength_.push_back(register_parameter(p + "_noise" + suffix, torch::zeros({1})));
      conv_bias_.push_back(register_parameter(p + "_bias" + suffix, torch::zeros({ch})));
    }
    to_wavelet_.push_back(register_module(p + "_to_wavelet", ModulatedConv(ch, 4, 1, d, false)));
    to_wavelet_bias_.push_back(register_parameter(p + "_to_wavelet_bias", torch::zeros({4})));
  }
}

torch::Tensor GeneratorImpl::map_latent(const torch::Tensor &z) {
  if (z.dim() != 2 || z.size(1) != config_.latent_dim) {
    throw ShapeError("latent z must be (N, " + std::to_string(config_.latent_dim) + ")");
  }
  auto x = z * torch::rsqrt(z.square().mean(1, true) + 1e-8);
  for (const auto &layer : *mapping_) {
    x = scaled_lrelu(layer->as<EqualLinearImpl>()->forward(x));
  }
  return x.unsqueeze(1).repeat({1, config_.num_ws(), 1});
}

SynthesisOutput GeneratorImpl::synthesize(const torch::Tensor &ws, const NoiseSpec &noise) {
  if (ws.dim() != 3 || ws.size(1) != config_.num_ws() || ws.size(2) != config_.latent_dim) {
    throw ShapeError("ws must be (N, " + std::to_string(config_.num_ws()) + ", " +
                     std::to_string(config_.latent_dim) + ")");
  }
  const auto n = ws.size(0);
  const auto opts = ws.options().requires_grad(false);

  std::optional<at::Generator> gen;
  if (noise.kind == NoiseSpec::Kind::seeded) {
    gen = at::detail::createCPUGenerator(noise.seed);
  }
  auto make_noise = [&](int64_t res) {
    switch (noise.kind) {
    case NoiseSpec::Kind::zero:
      return torch::zeros({n, 1, res, res}, opts);
    case NoiseSpec::Kind::seeded:
      return torch::randn({n, 1, res, res}, *gen, opts.dtype(torch::kFloat64)).to(opts);
    case NoiseSpec::Kind::random:
      break;
    }
    return torch::randn({n, 1, res, res}, opts);
  };

  SynthesisOutput out;
  auto x = const_input_.to(ws.dtype()).expand({n, -1, -1, -1});
  std::optional<wavelet::SubbandStack> acc;
  for (int64_t l = 0; l < config_.num_levels(); ++l) {
    const auto res = config_.level_resolution(l);
    if (l > 0) {
      x = wavelet::bilinear_up2(x);
    }
    for (int k = 0; k < 2; ++k) {
      const auto idx = static_cast<size_t>(2 * l + k);
      x = convs_[idx]->forward(x, ws.select(1, 3 * l + k));
      x = x + noise_strength_[idx] * make_noise(res);
      x = scaled_lrelu(x + conv_bias_[idx].view({1, -1, 1, 1}));
    }
    auto coeffs = to_wavelet_[static_cast<size_t>(l)]->forward(x, ws.select(1, 3 * l + 2)) +
                  to_wavelet_bias_[static_cast<size_t>(l)].view({1, -1, 1, 1});
    auto bands = wavelet::SubbandStack::unpack(coeffs);
    acc = acc ? wavelet::wavelet_upsample(*acc) + bands : bands;
    out.pyramid.push_back(*acc);
  }
  out.image = wavelet::iwt2(*acc);
  return out;
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor &z, const NoiseSpec &noise) {
  return synthesize(map_latent(z), noise).image;
}

std::vector<torch::Tensor> GeneratorImpl::style_matrices() const {
  std::vector<torch::Tensor> out;
  for (size_t l = 0; l < to_wavelet_.size(); ++l) {
    out.push_back(convs_[2 * l]->affine->effective_weight());
    out.push_back(convs_[2 * l + 1]->affine->effective_weight());
    out.push_back(to_wavelet_[l]->affine->effective_weight());
  }
  return out;
}

torch::Tensor minibatch_stddev(const torch::Tensor &x, int64_t group_size) {
  const auto n = x.size(0);
  int64_t g = std::min(group_size, n);
  while (n % g != 0) {
    --g;
  }
  const auto c = x.size(1);
  const auto h = x.size(2);
  const auto w = x.size(3);
  auto y = x.reshape({g, n / g, c, h, w});
  y = y - y.mean(0, true);
  y = torch::sqrt(y.square().mean(0) + 1e-8); // (n/g, c, h, w)
  y = y.mean({1, 2, 3});                      // (n/g)
  y = y.reshape({1, n / g, 1, 1, 1}).expand({g, n / g, 1, h, w}).reshape({n, 1, h, w});
  return torch::cat({x, y}, 1);
}

DiscriminatorImpl::DiscriminatorImpl(DiscriminatorConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto schedule = config_.channel_schedule();
  const auto levels = static_cast<int64_t>(schedule.size());
  from_wavelet_ = register_module("from_wavelet", EqualConv2d(4, schedule.back(), 1));
  for (int64_t l = levels - 1; l >= 1; --l) {
    const auto ch = schedule[static_cast<size_t>(l)];
    const auto next = schedule[static_cast<size_t>(l - 1)];
    const std::string p = "level" + std::to_string(l);
    block_conv_a_.push_back(register_module(p + "_conv_a", EqualConv2d(ch, ch, 3)));
    block_conv_b_.push_back(register_module(p + "_conv_b", EqualConv2d(ch, ch, 3)));
    block_down_.push_back(register_module(p + "_down", EqualConv2d(4 * ch, next, 1)));
  }
  const auto c0 = schedule[0];
  const auto base = config_.base_resolution;
  final_conv_ = register_module("final_conv", EqualConv2d(c0 + 1, c0, 3));
  final_linear_ = register_module("final_linear", EqualLinear(c0 * base * base, c0));
  out_ = register_module("out", EqualLinear(c0, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor &images) {
  if (images.dim() != 4 || images.size(1) != 1 || images.size(2) != config_.resolution ||
      images.size(3) != config_.resolution) {
    throw ShapeError("discriminator expects (N, 1, " + std::to_string(config_.resolution) + ", " +
                     std::to_string(config_.resolution) + ")");
  }
  auto x = scaled_lrelu(from_wavelet_->forward(wavelet::dwt2(images).pack()));
  for (size_t b = 0; b < block_conv_a_.size(); ++b) {
    x = scaled_lrelu(block_conv_a_[b]->forward(x));
    x = scaled_lrelu(block_conv_b_[b]->forward(x));
    x = scaled_lrelu(block_down_[b]->forward(wavelet::dwt2(x).pack()));
  }
  x = minibatch_stddev(x, config_.mbstd_group);
  x = scaled_lrelu(final_conv_->forward(x));
  x = scaled_lrelu(final_linear_->forward(x.flatten(1)));
  return out_->forward(x).squeeze(1);
}

torch::Tensor truncate_w(const torch::Tensor &ws, double psi, const torch::Tensor &w_mean) {
  if (!(psi >= 0.0 && psi <= 1.0)) {
    throw ParameterError("truncation psi must lie in [0,1]");
  }
  if (w_mean.size(-1) != ws.size(-1)) {
    throw ShapeError("w_mean dimension does not match ws");
  }
  // lerp is exact at both end points: psi=1 returns ws and psi=0 returns w_mean.
  return w_mean.expand_as(ws).lerp(ws, psi);
}

torch::Tensor sample_z(int64_t n, int64_t latent_dim, uint64_t seed) {
  auto gen = at::detail::createCPUGenerator(seed);
  return torch::randn({n, latent_dim}, gen, torch::kFloat64).to(torch::kFloat32);
}

torch::Tensor compute_w_mean(Generator &generator, int64_t n, uint64_t seed) {
  if (n < 1000) {
    throw ParameterError("w_mean needs at least 1000 mapped latents");
  }
  torch::NoGradGuard guard;
  const auto d = generator->config().latent_dim;
  auto z = sample_z(n, d, seed).to(generator->parameters().front().dtype());
  auto acc = torch::zeros({d}, z.options().dtype(torch::kFloat64));
  for (int64_t start = 0; start < n; start += 1000) {
    const auto len = std::min<int64_t>(1000, n - start);
    auto w = generator->map_latent(z.narrow(0, start, len)).select(1, 0);
    acc += w.to(torch::kFloat64).sum(0);
  }
  return (acc / static_cast<double>(n)).to(z.dtype());
}

void copy_state(torch::nn::Module &dst, const torch::nn::Module &src) {
  torch::NoGradGuard guard;
  auto src_params = src.named_parameters(true);
  for (auto &item : dst.named_parameters(true)) {
    const auto *p = src_params.find(item.key());
    if (p == nullptr || p->sizes() != item.value().sizes()) {
      throw ShapeError("parameter mismatch while copying: " + item.key());
    }
    item.value().copy_(*p);
  }
  auto src_buffers = src.named_buffers(true);
  for (auto &item : dst.named_buffers(true)) {
    const auto *b = src_buffers.find(item.key());
    if (b == nullptr) {
      throw ShapeError("buffer mismatch while copying: " + item.key());
    }
    item.value().copy_(*b);
  }
}

void ema_update(torch::nn::Module &ema, const torch::nn::Module &current, double beta) {
  torch::NoGradGuard guard;
  auto cur = current.named_parameters(true);
  for (auto &item : ema.named_parameters(true)) {
    const auto *p = cur.find(item.key());
    if (p == nullptr) {
      throw ShapeError("EMA parameter mismatch: " + item.key());
    }
    item.value().copy_(p->lerp(item.value(), beta));
  }
}

} // namespace octgan::gan
