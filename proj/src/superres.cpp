#include "octgan/superres.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "octgan/errors.hpp"
#include "octgan/metrics.hpp"
#include "octgan/rng.hpp"

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace octgan::sr {

void PatchSet::append(const PatchSet &other) {
  if (other.patches.empty()) {
    return;
  }
  if (!patches.empty() && size != other.size) {
    throw ShapeError("cannot merge patch sets of different sizes");
  }
  size = other.size;
  patches.insert(patches.end(), other.patches.begin(), other.patches.end());
  source_ids.insert(source_ids.end(), other.source_ids.begin(), other.source_ids.end());
  offsets.insert(offsets.end(), other.offsets.begin(), other.offsets.end());
}

PatchSet extract_patches(const Raster &image, int64_t size, int64_t stride, int64_t source_id) {
  if (size < 1 || size > std::min(image.rows(), image.cols())) {
    throw ParameterError("patch size " + std::to_string(size) + " does not fit a " +
                         std::to_string(image.rows()) + "x" + std::to_string(image.cols()) +
                         " image");
  }
  if (stride < 1) {
    throw ParameterError("patch stride must be >= 1");
  }
  PatchSet set;
  set.size = size;
  for (int64_t r = 0; r + size <= image.rows(); r += stride) {
    for (int64_t c = 0; c + size <= image.cols(); c += stride) {
      Raster p(size, size);
      for (int64_t i = 0; i < size; ++i) {
        std::copy_n(image.data().begin() + (r + i) * image.cols() + c, size,
                    p.data().begin() + i * size);
      }
      set.patches.push_back(std::move(p));
      set.source_ids.push_back(source_id);
      set.offsets.emplace_back(r, c);
    }
  }
  return set;
}

PatchSet extract_patches(const std::vector<Raster> &images, int64_t size, int64_t stride) {
  PatchSet all;
  all.size = size;
  for (size_t i = 0; i < images.size(); ++i) {
    all.append(extract_patches(images[i], size, stride, static_cast<int64_t>(i)));
  }
  return all;
}

PatchSet filter_patches(const PatchSet &set, double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) {
    throw ParameterError("mean threshold must lie in [0, 1)");
  }
  PatchSet out;
  out.size = set.size;
  for (size_t i = 0; i < set.patches.size(); ++i) {
    if (set.patches[i].mean() > tau) {
      out.patches.push_back(set.patches[i]);
      out.source_ids.push_back(set.source_ids[i]);
      out.offsets.push_back(set.offsets[i]);
    }
  }
  return out;
}

namespace {

resample::KernelSpec classical_spec(resample::Kernel kind) {
  resample::KernelSpec spec;
  spec.kind = kind;
  spec.cubic_a = -0.5;
  spec.lanczos_a = 3;
  return spec;
}

} // namespace

Raster upsample_classical(const Raster &image, int64_t factor, resample::Kernel kind) {
  if (factor < 1) {
    throw ParameterError("upsampling factor must be >= 1");
  }
  return resample::resize(image, image.rows() * factor, image.cols() * factor,
                          classical_spec(kind));
}

Raster upsample_classical(const Raster &image, int64_t factor, const std::string &kind) {
  return upsample_classical(image, factor, resample::kernel_from_string(kind));
}

Raster downsample2x(const Raster &image, resample::Kernel kind) {
  if (image.rows() % 2 != 0 || image.cols() % 2 != 0) {
    throw ShapeError("downsample2x needs even dimensions, got " + std::to_string(image.rows()) +
                     "x" + std::to_string(image.cols()));
  }
  auto spec = classical_spec(kind);
  spec.antialias = kind == resample::Kernel::bicubic || kind == resample::Kernel::lanczos;
  return resample::resize(image, image.rows() / 2, image.cols() / 2, spec);
}

// ---------------------------------------------------------------------------------------------

void SRConfig::validate() const {
  if (scale != 2) {
    throw ConfigError("only 2x super-resolution is supported");
  }
  if (!(mean_threshold >= 0.0 && mean_threshold < 1.0)) {
    throw ConfigError("mean_threshold must lie in [0, 1)");
  }
  if (patch_size < 4 || patch_size % 2 != 0) {
    throw ConfigError("patch_size must be even and >= 4");
  }
  if (blocks < 1 || features < 1 || growth < 1 || layers_per_block < 1) {
    throw ConfigError("network sizes must be positive");
  }
  if (iterations < 1 || batch_size < 1 || checkpoint_every < 1) {
    throw ConfigError("iterations, batch_size and checkpoint_every must be positive");
  }
  if (!(lr > 0.0) || l1_weight < 0.0 || perceptual_weight < 0.0) {
    throw ConfigError("lr must be positive and loss weights non-negative");
  }
}

nlohmann::json SRConfig::to_json() const {
  return {{"scale", scale},
          {"patch_size", patch_size},
          {"mean_threshold", mean_threshold},
          {"blocks", blocks},
          {"features", features},
          {"growth", growth},
          {"layers_per_block", layers_per_block},
          {"res_scale", res_scale},
          {"iterations", iterations},
          {"batch_size", batch_size},
          {"lr", lr},
          {"l1_weight", l1_weight},
          {"perceptual_weight", perceptual_weight},
          {"checkpoint_every", checkpoint_every},
          {"seed", seed}};
}

SRConfig SRConfig::from_json(const nlohmann::json &j) {
  SRConfig c;
  for (const auto &[key, value] : j.items()) {
    if (key == "scale") {
      c.scale = value.get<int64_t>();
    } else if (key == "patch_size") {
      c.patch_size = value.get<int64_t>();
    } else if (key == "mean_threshold") {
      c.mean_threshold = value.get<double>();
    } else if (key == "blocks") {
      c.blocks = value.get<int64_t>();
    } else if (key == "features") {
      c.features = value.get<int64_t>();
    } else if (key == "growth") {
      c.growth = value.get<int64_t>();
    } else if (key == "layers_per_block") {
      c.layers_per_block = value.get<int64_t>();
    } else if (key == "res_scale") {
      c.res_scale = value.get<double>();
    } else if (key == "iterations") {
      c.iterations = value.get<int64_t>();
    } else if (key == "batch_size") {
      c.batch_size = value.get<int64_t>();
    } else if (key == "lr") {
      c.lr = value.get<double>();
    } else if (key == "l1_weight") {
      c.l1_weight = value.get<double>();
    } else if (key == "perceptual_weight") {
      c.perceptual_weight = value.get<double>();
    } else if (key == "checkpoint_every") {
      c.checkpoint_every = value.get<int64_t>();
    } else if (key == "seed") {
      c.seed = value.get<uint64_t>();
    } else {
      throw ConfigError("unknown superres config key: " + key);
    }
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------------------------

namespace {

torch::nn::Conv2d conv(int64_t in, int64_t out, int64_t k) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).padding(k / 2));
}

torch::Tensor lrelu(const torch::Tensor &x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
}

torch::Tensor bilinear2x(const torch::Tensor &x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .scale_factor(std::vector<double>{2.0, 2.0})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

} // namespace

ResidualDenseNetImpl::ResidualDenseNetImpl(const SRConfig &config) : res_scale_(config.res_scale) {
  config.validate();
  const auto f = config.features;
  const auto g = config.growth;
  shallow_ = register_module("shallow", conv(1, f, 3));
  for (int64_t b = 0; b < config.blocks; ++b) {
    Block block;
    for (int64_t l = 0; l < config.layers_per_block; ++l) {
      block.dense.push_back(register_module(
          "block" + std::to_string(b) + "_dense" + std::to_string(l), conv(f + l * g, g, 3)));
    }
    block.fuse = register_module("block" + std::to_string(b) + "_fuse",
                                 conv(f + config.layers_per_block * g, f, 1));
    blocks_.push_back(std::move(block));
  }
  global_fuse_ = register_module("global_fuse", conv(config.blocks * f, f, 1));
  global_conv_ = register_module("global_conv", conv(f, f, 3));
  upsample_conv_ = register_module("upsample_conv", conv(f, 4 * f, 3));
  output_conv_ = register_module("output_conv", conv(f, 1, 3));
  // Start from the bilinear skip so early training refines instead of repairing.
  torch::NoGradGuard guard;
  output_conv_->weight.zero_();
  output_conv_->bias.zero_();
}

torch::Tensor ResidualDenseNetImpl::forward(const torch::Tensor &x) {
  if (x.dim() != 4 || x.size(1) != 1) {
    throw ShapeError("super-resolution input must be (N, 1, H, W)");
  }
  const auto skip = bilinear2x(x);
  if (res_scale_ == 0.0) {
    return skip;
  }
  const auto shallow = shallow_->forward(x * 2.0 - 1.0);
  auto h = shallow;
  std::vector<torch::Tensor> block_outputs;
  for (auto &block : blocks_) {
    std::vector<torch::Tensor> feats{h};
    for (auto &layer : block.dense) {
      feats.push_back(lrelu(layer->forward(torch::cat(feats, 1))));
    }
    h = h + block.fuse->forward(torch::cat(feats, 1));
    block_outputs.push_back(h);
  }
  h = global_conv_->forward(global_fuse_->forward(torch::cat(block_outputs, 1))) + shallow;
  h = lrelu(F::pixel_shuffle(upsample_conv_->forward(h), 2));
  return skip + res_scale_ * output_conv_->forward(h);
}

checkpoint::Checkpoint make_sr_checkpoint(const SRConfig &config, const ResidualDenseNet &net,
                                          int64_t iteration) {
  checkpoint::Checkpoint ckpt;
  ckpt.manifest.model_kind = "sr";
  ckpt.manifest.iteration = iteration;
  ckpt.manifest.config = config.to_json();
  ckpt.add_module("net.", *net);
  return ckpt;
}

SrModel load_sr_model(const checkpoint::Checkpoint &ckpt) {
  if (ckpt.manifest.model_kind != "sr") {
    throw FormatError("expected an sr checkpoint, found kind '" + ckpt.manifest.model_kind + "'");
  }
  SrModel m;
  m.config = SRConfig::from_json(ckpt.manifest.config);
  m.net = ResidualDenseNet(m.config);
  ckpt.load_module("net.", *m.net);
  m.net->eval();
  m.iteration = ckpt.manifest.iteration;
  return m;
}

SrModel load_sr_model(const fs::path &path) {
  return load_sr_model(checkpoint::load_checkpoint(path));
}

torch::Tensor sr_upscale(const SrModel &model, const torch::Tensor &batch) {
  if (model.config.scale != 2) {
    throw ConfigError("checkpoint scale " + std::to_string(model.config.scale) +
                      " does not match the 2x upscaler");
  }
  if (batch.dim() != 4 || batch.size(1) != 1 || batch.size(2) < 2 || batch.size(3) < 2) {
    throw ShapeError("sr_upscale needs (N, 1, H, W) inputs of at least 2x2");
  }
  torch::NoGradGuard guard;
  return model.net.ptr()->forward(batch.to(torch::kFloat32)).clamp(0.0, 1.0);
}

Raster sr_upscale(const SrModel &model, const Raster &image) {
  return Raster::from_tensor(sr_upscale(model, image.to_tensor().unsqueeze(0).unsqueeze(0))[0][0]);
}

std::string format_sr_row(const SrMetricsRow &row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(row.iter), row.loss, row.l1, row.perceptual,
                row.val_perceptual, row.val_l1);
  return buf;
}

// ---------------------------------------------------------------------------------------------

namespace {

torch::Tensor downsample_stack(const std::vector<Raster> &images) {
  std::vector<Raster> small;
  small.reserve(images.size());
  for (const auto &im : images) {
    small.push_back(downsample2x(im));
  }
  return stack_rasters(small);
}

struct ValScore {
  double perceptual = 0.0;
  double l1 = 0.0;
};

template <typename Fn>
ValScore score_batches(const torch::Tensor &lr, const torch::Tensor &hr, Fn &&restore) {
  torch::NoGradGuard guard;
  const auto &perceptual = metrics::default_perceptual();
  constexpr int64_t kChunk = 64;
  double p = 0.0;
  double l1 = 0.0;
  for (int64_t start = 0; start < lr.size(0); start += kChunk) {
    const auto len = std::min(kChunk, lr.size(0) - start);
    const auto out = restore(lr.narrow(0, start, len));
    const auto target = hr.narrow(0, start, len);
    p += perceptual.distance(out, target).sum().template item<double>();
    l1 += (out - target).abs().mean({1, 2, 3}).sum().template item<double>();
  }
  const auto n = static_cast<double>(lr.size(0));
  return {p / n, l1 / n};
}

struct Mean {
  double sum = 0.0;
  int64_t count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
  double take() {
    const double m = count > 0 ? sum / static_cast<double>(count) : 0.0;
    sum = 0.0;
    count = 0;
    return m;
  }
};

} // namespace

SrTrainResult train_sr(const std::vector<Raster> &train_images,
                       const std::vector<Raster> &val_images, const SRConfig &cfg,
                       const fs::path &out_dir) {
  cfg.validate();
  if (val_images.empty()) {
    throw ParameterError("super-resolution training needs a validation set");
  }
  const auto patches = filter_patches(
      extract_patches(train_images, cfg.patch_size, cfg.patch_size), cfg.mean_threshold);
  if (patches.count() == 0) {
    throw ParameterError("no training patch passes the mean-signal filter");
  }
  const auto hr_all = stack_rasters(patches.patches);
  const auto lr_all = downsample_stack(patches.patches);
  const auto val_hr = stack_rasters(val_images);
  const auto val_lr = downsample_stack(val_images);

  fs::create_directories(out_dir / "checkpoints");
  torch::manual_seed(cfg.seed);
  ResidualDenseNet net(cfg);
  net->train();
  torch::optim::Adam opt(net->parameters(),
                         torch::optim::AdamOptions(cfg.lr).betas({0.9, 0.99}).eps(1e-8));
  const auto &perceptual = metrics::default_perceptual();

  SrTrainResult result;
  const auto bilinear = score_batches(val_lr, val_hr, [](const torch::Tensor &x) {
    return bilinear2x(x).clamp(0.0, 1.0);
  });
  result.bilinear_val_perceptual = bilinear.perceptual;
  result.bilinear_val_l1 = bilinear.l1;

  std::ofstream csv(out_dir / "metrics.csv", std::ios::trunc);
  if (!csv) {
    throw IoError("cannot write " + (out_dir / "metrics.csv").string());
  }
  csv << kSrMetricsHeader << '\n' << std::flush;

  std::mt19937_64 rng(derive_seed(cfg.seed, 0x5EED));
  std::vector<int64_t> order(static_cast<size_t>(patches.count()));
  std::iota(order.begin(), order.end(), int64_t{0});
  size_t cursor = order.size();
  nlohmann::json history = nlohmann::json::array();
  Mean loss_m, l1_m, perc_m;

  for (int64_t it = 0; it < cfg.iterations; ++it) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < cfg.batch_size; ++i) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    const auto sel = torch::tensor(idx, torch::kLong);
    const auto hr = hr_all.index_select(0, sel);
    const auto out = net->forward(lr_all.index_select(0, sel));
    const auto l1 = (out - hr).abs().mean();
    const auto perc = perceptual.distance(out, hr).mean();
    const auto loss = l1 * cfg.l1_weight + perc * cfg.perceptual_weight;
    const double loss_v = loss.item<double>();
    if (!std::isfinite(loss_v)) {
      throw NumericError("super-resolution loss became non-finite at iteration " +
                         std::to_string(it + 1));
    }
    opt.zero_grad();
    loss.backward();
    opt.step();
    loss_m.add(loss_v);
    l1_m.add(l1.item<double>());
    perc_m.add(perc.item<double>());

    if ((it + 1) % cfg.checkpoint_every == 0 || it + 1 == cfg.iterations) {
      net->eval();
      SrModel view{cfg, net, it + 1};
      const auto val = score_batches(val_lr, val_hr, [&](const torch::Tensor &x) {
        return sr_upscale(view, x);
      });
      net->train();
      SrMetricsRow row{it + 1, loss_m.take(), l1_m.take(), perc_m.take(), val.perceptual, val.l1};
      history.push_back({{"iteration", it + 1},
                         {"val_perceptual", val.perceptual},
                         {"val_l1", val.l1}});
      auto ckpt = make_sr_checkpoint(cfg, net, it + 1);
      ckpt.manifest.metric_history = history;
      char name[64];
      std::snprintf(name, sizeof(name), "iter_%07lld.ckpt", static_cast<long long>(it + 1));
      const auto path = out_dir / "checkpoints" / name;
      checkpoint::save_checkpoint(path, ckpt);
      result.checkpoints.push_back({it + 1, path, val.perceptual, val.l1});
      result.rows.push_back(row);
      csv << format_sr_row(row) << '\n' << std::flush;
    }
  }

  for (size_t i = 1; i < result.checkpoints.size(); ++i) {
    if (result.checkpoints[i].val_perceptual < result.checkpoints[result.best].val_perceptual) {
      result.best = i;
    }
  }
  nlohmann::json run = {{"config", cfg.to_json()},
                        {"train_patches", patches.count()},
                        {"bilinear_val_perceptual", result.bilinear_val_perceptual},
                        {"bilinear_val_l1", result.bilinear_val_l1},
                        {"metric_history", history},
                        {"best", result.checkpoints[result.best].path.string()}};
  std::ofstream(out_dir / "run.json") << run.dump(2) << '\n';
  return result;
}

// ---------------------------------------------------------------------------------------------

ComparisonRow score_method(const std::string &method, const std::vector<Raster> &val_set,
                           const Reconstructor &reconstruct) {
  if (val_set.empty()) {
    throw ParameterError("comparison needs a non-empty validation set");
  }
  const auto &perceptual = metrics::default_perceptual();
  std::vector<double> d;
  d.reserve(val_set.size());
  for (const auto &im : val_set) {
    d.push_back(perceptual(im, reconstruct(im)));
  }
  const double n = static_cast<double>(d.size());
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : d) {
    ss += (v - mean) * (v - mean);
  }
  return {method, mean, d.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}

std::vector<ComparisonRow> compare_classical(const std::vector<Raster> &val_set) {
  std::vector<ComparisonRow> rows;
  for (auto kind : {resample::Kernel::nearest, resample::Kernel::bilinear,
                    resample::Kernel::bicubic, resample::Kernel::lanczos}) {
    rows.push_back(score_method(resample::to_string(kind), val_set, [kind](const Raster &x) {
      return upsample_classical(downsample2x(x), 2, kind);
    }));
  }
  return rows;
}

std::vector<ComparisonRow> compare_upsamplers(const std::vector<Raster> &val_set,
                                              const SrModel &model) {
  auto rows = compare_classical(val_set);
  rows.push_back(score_method("sr", val_set, [&model](const Raster &x) {
    return sr_upscale(model, downsample2x(x));
  }));
  return rows;
}

void write_comparison_csv(const fs::path &path, const std::vector<ComparisonRow> &rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out << kComparisonHeader << '\n';
  char buf[256];
  for (const auto &r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g", r.method.c_str(), r.mean_perceptual, r.std);
    out << buf << '\n';
  }
}

} // namespace octgan::sr
