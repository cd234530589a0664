#include "octgan/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "octgan/checkpoint.hpp"
#include "octgan/errors.hpp"
#include "octgan/model.hpp"
#include "octgan/rng.hpp"

namespace octgan::train {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (iterations < 1 || batch_size < 1 || r1_every < 1 || pl_every < 1 || checkpoint_every < 1) {
    throw ParameterError("training counts must be >= 1");
  }
  if (fid_sample_count < 2) {
    throw ParameterError("fid_sample_count must be >= 2 (covariance needs two samples)");
  }
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw ParameterError("lr must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ParameterError("adam betas must lie in [0,1)");
  }
  if (!(r1_gamma >= 0.0) || !(pl_weight >= 0.0)) {
    throw ParameterError("regularization weights must be >= 0");
  }
  if (!(pl_decay > 0.0 && pl_decay <= 1.0)) {
    throw ParameterError("pl_decay must lie in (0,1]");
  }
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) {
    throw ParameterError("ema_decay must lie in [0,1)");
  }
  generator.validate();
}

nlohmann::json TrainConfig::to_json() const {
  return {{"iterations", iterations},
          {"batch_size", batch_size},
          {"lr", lr},
          {"betas", {beta1, beta2}},
          {"r1_gamma", r1_gamma},
          {"r1_every", r1_every},
          {"pl_every", pl_every},
          {"pl_decay", pl_decay},
          {"pl_weight", pl_weight},
          {"checkpoint_every", checkpoint_every},
          {"fid_sample_count", fid_sample_count},
          {"seed", seed},
          {"ema", ema},
          {"ema_decay", ema_decay},
          {"generator", generator.to_json()},
          {"embedder", embedder.to_json()}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json &j) {
  TrainConfig c;
  for (const auto &[key, value] : j.items()) {
    if (key == "iterations") {
      c.iterations = value.get<int64_t>();
    } else if (key == "batch_size") {
      c.batch_size = value.get<int64_t>();
    } else if (key == "lr") {
      c.lr = value.get<double>();
    } else if (key == "betas") {
      const auto b = value.get<std::vector<double>>();
      if (b.size() != 2) {
        throw ConfigError("betas must have two entries");
      }
      c.beta1 = b[0];
      c.beta2 = b[1];
    } else if (key == "r1_gamma") {
      c.r1_gamma = value.get<double>();
    } else if (key == "r1_every") {
      c.r1_every = value.get<int64_t>();
    } else if (key == "pl_every") {
      c.pl_every = value.get<int64_t>();
    } else if (key == "pl_decay") {
      c.pl_decay = value.get<double>();
    } else if (key == "pl_weight") {
      c.pl_weight = value.get<double>();
    } else if (key == "checkpoint_every") {
      c.checkpoint_every = value.get<int64_t>();
    } else if (key == "fid_sample_count") {
      c.fid_sample_count = value.get<int64_t>();
    } else if (key == "seed") {
      c.seed = value.get<uint64_t>();
    } else if (key == "ema") {
      c.ema = value.get<bool>();
    } else if (key == "ema_decay") {
      c.ema_decay = value.get<double>();
    } else if (key == "generator") {
      c.generator = gan::GeneratorConfig::from_json(value);
    } else if (key == "embedder") {
      c.embedder = metrics::EmbedderSpec::from_json(value);
    } else {
      throw ConfigError("unknown train config key: " + key);
    }
  }
  c.validate();
  return c;
}

torch::Tensor d_loss(const torch::Tensor &real_logits, const torch::Tensor &fake_logits) {
  if (real_logits.numel() == 0 || fake_logits.numel() == 0) {
    throw ParameterError("d_loss needs non-empty logit batches");
  }
  return torch::softplus(-real_logits).mean() + torch::softplus(fake_logits).mean();
}

torch::Tensor g_loss(const torch::Tensor &fake_logits) {
  if (fake_logits.numel() == 0) {
    throw ParameterError("g_loss needs a non-empty logit batch");
  }
  return torch::softplus(-fake_logits).mean();
}

torch::Tensor r1_penalty(const torch::Tensor &real_batch, const DiscriminatorFn &discriminator,
                         double gamma) {
  if (real_batch.numel() == 0) {
    throw ParameterError("r1_penalty needs a non-empty batch");
  }
  if (!(gamma >= 0.0)) {
    throw ParameterError("r1 gamma must be >= 0");
  }
  const auto x = real_batch.detach().requires_grad_(true);
  const auto logits = discriminator(x);
  if (!logits.requires_grad()) {
    return torch::zeros({}, real_batch.options());
  }
  auto grads = torch::autograd::grad({logits.sum()}, {x}, {}, /*retain_graph=*/true,
                                     /*create_graph=*/true, /*allow_unused=*/true);
  if (!grads[0].defined()) {
    return torch::zeros({}, real_batch.options());
  }
  if (!torch::isfinite(grads[0]).all().item<bool>()) {
    throw NumericError("non-finite discriminator input gradient in R1 penalty");
  }
  const auto sq = grads[0].square().flatten(1).sum(1);
  return sq.mean() * (gamma / 2.0);
}

PathLengthResult path_length_from_norms(const torch::Tensor &norms, const PathLengthState &state,
                                        double decay) {
  if (norms.numel() == 0) {
    throw ParameterError("path length penalty needs a non-empty batch");
  }
  if (!torch::isfinite(norms.detach()).all().item<bool>()) {
    throw NumericError("non-finite path length norms");
  }
  const double batch_mean = norms.detach().mean().item<double>();
  PathLengthResult out;
  out.penalty = (norms - state.mean).square().mean();
  out.norms = norms.detach();
  out.state.mean = state.mean + decay * (batch_mean - state.mean);
  return out;
}

PathLengthResult path_length_penalty(const torch::Tensor &ws, const SynthesisFn &synthesize,
                                     const PathLengthState &state, double decay,
                                     const std::optional<torch::Tensor> &projection) {
  if (ws.dim() != 3) {
    throw ShapeError("path length penalty expects ws shaped (N, L, D)");
  }
  auto w = ws;
  if (!w.requires_grad()) {
    w = ws.detach().requires_grad_(true);
  }
  const auto images = synthesize(w);
  torch::Tensor y;
  if (projection) {
    if (projection->sizes() != images.sizes()) {
      throw ShapeError("projection noise must match the generated image shape");
    }
    y = *projection;
  } else {
    const double pixels = static_cast<double>(images.size(-1) * images.size(-2));
    y = torch::randn_like(images) / std::sqrt(pixels);
  }
  torch::Tensor norms;
  if (images.requires_grad()) {
    auto grads = torch::autograd::grad({(images * y).sum()}, {w}, {}, /*retain_graph=*/true,
                                       /*create_graph=*/true, /*allow_unused=*/true);
    if (grads[0].defined()) {
      norms = grads[0].square().sum(2).mean(1).sqrt();
    }
  }
  if (!norms.defined()) {
    norms = torch::zeros({ws.size(0)}, ws.options());
  }
  return path_length_from_norms(norms, state, decay);
}

std::string format_metrics_row(const MetricsRow &row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g",
                static_cast<long long>(row.iter), row.loss_d, row.loss_g, row.r1, row.pl, row.fid);
  return buf;
}

size_t select_best(const std::vector<double> &fids) {
  if (fids.empty()) {
    throw ParameterError("select_best needs at least one checkpoint");
  }
  size_t best = 0;
  for (size_t i = 1; i < fids.size(); ++i) {
    if (fids[i] < fids[best]) {
      best = i;
    }
  }
  return best;
}

namespace {

void set_requires_grad(torch::nn::Module &module, bool flag) {
  for (auto &p : module.parameters()) {
    p.set_requires_grad(flag);
  }
}

torch::optim::Adam make_adam(torch::nn::Module &module, const TrainConfig &cfg, int64_t every) {
  // Lazy regularization runs every `every` steps; rescale so the effective schedule matches.
  const double ratio = static_cast<double>(every) / static_cast<double>(every + 1);
  auto opts = torch::optim::AdamOptions(cfg.lr * ratio)
                  .betas({std::pow(cfg.beta1, ratio), std::pow(cfg.beta2, ratio)})
                  .eps(1e-8);
  return torch::optim::Adam(module.parameters(), opts);
}

metrics::GaussianMoments reference_moments(const std::vector<Raster> &reference,
                                           const metrics::FeatureEmbedder &embedder,
                                           int64_t limit, uint64_t seed) {
  if (static_cast<int64_t>(reference.size()) <= limit) {
    return metrics::gaussian_stats(embedder.embed(reference));
  }
  std::vector<size_t> order(reference.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 rng(derive_seed(seed, 0x4EF));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Raster> subset;
  subset.reserve(static_cast<size_t>(limit));
  for (int64_t i = 0; i < limit; ++i) {
    subset.push_back(reference[order[static_cast<size_t>(i)]]);
  }
  return metrics::gaussian_stats(embedder.embed(subset));
}

double generated_fid(gan::Generator &generator, const phantom::DatasetStats &stats,
                     const metrics::GaussianMoments &reference,
                     const metrics::FeatureEmbedder &embedder, int64_t n, uint64_t seed) {
  const auto images = sample_images(generator, stats, n, seed);
  return metrics::frechet_distance(reference, metrics::gaussian_stats(embedder.embed(images)));
}

fs::path checkpoint_name(const fs::path &dir, int64_t iteration) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "iter_%07lld.ckpt", static_cast<long long>(iteration));
  return dir / buf;
}

class BatchFeeder {
public:
  BatchFeeder(torch::Tensor data, uint64_t seed)
      : data_(std::move(data)), rng_(seed), order_(static_cast<size_t>(data_.size(0))) {
    std::iota(order_.begin(), order_.end(), int64_t{0});
    cursor_ = order_.size();
  }

  torch::Tensor next(int64_t n) {
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      if (cursor_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      idx.push_back(order_[cursor_++]);
    }
    return data_.index_select(0, torch::tensor(idx, torch::kLong));
  }

private:
  torch::Tensor data_;
  std::mt19937_64 rng_;
  std::vector<int64_t> order_;
  size_t cursor_ = 0;
};

struct Running {
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

TrainResult train(const TrainConfig &cfg, const std::vector<Raster> &dataset,
                  const fs::path &out_dir) {
  cfg.validate();
  const int64_t res = cfg.generator.resolution;
  if (static_cast<int64_t>(dataset.size()) < cfg.batch_size) {
    throw ParameterError("dataset has fewer images than batch_size");
  }
  for (const auto &img : dataset) {
    if (img.rows() != res || img.cols() != res) {
      throw ConfigError("dataset image is " + std::to_string(img.rows()) + "x" +
                        std::to_string(img.cols()) + " but the generator resolution is " +
                        std::to_string(res));
    }
  }

  const auto stats = phantom::compute_stats(dataset);
  const auto ckpt_dir = out_dir / "checkpoints";
  fs::create_directories(ckpt_dir);

  torch::manual_seed(cfg.seed);
  gan::Generator g(cfg.generator);
  gan::Discriminator d(gan::DiscriminatorConfig::matching(cfg.generator));
  gan::Generator g_ema(cfg.generator);
  gan::copy_state(*g_ema, *g);
  set_requires_grad(*g_ema, false);
  gan::Generator &inference = cfg.ema ? g_ema : g;

  auto opt_g = make_adam(*g, cfg, cfg.pl_every);
  auto opt_d = make_adam(*d, cfg, cfg.r1_every);

  const metrics::FeatureEmbedder embedder(cfg.embedder);
  const uint64_t fid_seed = derive_seed(cfg.seed, 0xF1D);
  const auto ref = reference_moments(dataset, embedder, cfg.fid_sample_count, cfg.seed);
  BatchFeeder feeder(phantom::normalize(stack_rasters(dataset), stats),
                     derive_seed(cfg.seed, 0xDA7A));

  TrainResult result;
  result.baseline_fid =
      generated_fid(inference, stats, ref, embedder, cfg.fid_sample_count, fid_seed);
  nlohmann::json history = nlohmann::json::array();
  history.push_back({{"iteration", 0}, {"fid", result.baseline_fid}});

  std::ofstream csv(out_dir / "metrics.csv", std::ios::trunc);
  if (!csv) {
    throw IoError("cannot write " + (out_dir / "metrics.csv").string());
  }
  csv << kMetricsHeader << '\n' << std::flush;

  auto snapshot = [&](int64_t iteration) {
    auto w_mean = gan::compute_w_mean(inference, 4096, derive_seed(cfg.seed, 0x3EA));
    auto ckpt = make_gan_checkpoint(cfg.generator, inference, stats, w_mean, iteration,
                                    cfg.to_json());
    ckpt.add_module("g.", *g);
    ckpt.add_module("d.", *d);
    ckpt.manifest.metric_history = history;
    return ckpt;
  };
  auto abort_on = [&](const torch::Tensor &loss, const char *what, int64_t iteration) {
    if (std::isfinite(loss.item<double>())) {
      return;
    }
    // Parameters have not been stepped with this loss yet, so they are the last good state.
    auto ckpt = snapshot(iteration);
    ckpt.manifest.extra["abort"] = {{"iteration", iteration}, {"loss", what}};
    const auto path = out_dir / "nan_abort.ckpt";
    checkpoint::save_checkpoint(path, ckpt);
    throw NumericError(std::string("non-finite ") + what + " at iteration " +
                       std::to_string(iteration) + "; last good state written to " +
                       path.string());
  };

  PathLengthState pl_state;
  Running acc_d, acc_g, acc_r1, acc_pl;
  const int64_t latent = cfg.generator.latent_dim;
  const int64_t n = cfg.batch_size;
  const int64_t pl_batch = std::max<int64_t>(1, n / 2);

  for (int64_t it = 0; it < cfg.iterations; ++it) {
    // Discriminator step.
    const auto real = feeder.next(n);
    torch::Tensor fake;
    {
      torch::NoGradGuard no_grad;
      fake = g->forward(torch::randn({n, latent}), gan::NoiseSpec::random());
    }
    const auto loss_d = d_loss(d->forward(real), d->forward(fake));
    abort_on(loss_d, "discriminator loss", it);
    opt_d.zero_grad();
    loss_d.backward();
    opt_d.step();
    acc_d.add(loss_d.item<double>());

    if ((it + 1) % cfg.r1_every == 0) {
      const auto r1 =
          r1_penalty(real, [&](const torch::Tensor &x) { return d->forward(x); }, cfg.r1_gamma);
      abort_on(r1, "R1 penalty", it);
      opt_d.zero_grad();
      (r1 * static_cast<double>(cfg.r1_every)).backward();
      opt_d.step();
      acc_r1.add(r1.item<double>());
      ++result.r1_applications;
    }

    // Generator step; the discriminator is frozen so only G receives gradients.
    set_requires_grad(*d, false);
    const auto fake_g = g->forward(torch::randn({n, latent}), gan::NoiseSpec::random());
    const auto loss_g = g_loss(d->forward(fake_g));
    abort_on(loss_g, "generator loss", it);
    opt_g.zero_grad();
    loss_g.backward();
    opt_g.step();
    acc_g.add(loss_g.item<double>());
    set_requires_grad(*d, true);

    if ((it + 1) % cfg.pl_every == 0) {
      const auto ws = g->map_latent(torch::randn({pl_batch, latent}));
      const auto pl = path_length_penalty(
          ws,
          [&](const torch::Tensor &w) {
            return g->synthesize(w, gan::NoiseSpec::random()).image;
          },
          pl_state, cfg.pl_decay);
      abort_on(pl.penalty, "path length penalty", it);
      pl_state = pl.state;
      opt_g.zero_grad();
      (pl.penalty * (cfg.pl_weight * static_cast<double>(cfg.pl_every))).backward();
      opt_g.step();
      acc_pl.add(pl.penalty.item<double>());
      ++result.pl_applications;
    }

    if (cfg.ema) {
      const double t = static_cast<double>(it);
      const double beta = std::min(cfg.ema_decay, (1.0 + t) / (10.0 + t));
      gan::ema_update(*g_ema, *g, beta);
    }

    if ((it + 1) % cfg.checkpoint_every == 0) {
      const int64_t iteration = it + 1;
      MetricsRow row;
      row.iter = iteration;
      row.loss_d = acc_d.take();
      row.loss_g = acc_g.take();
      row.r1 = acc_r1.take();
      row.pl = acc_pl.take();
      row.fid = generated_fid(inference, stats, ref, embedder, cfg.fid_sample_count, fid_seed);
      history.push_back({{"iteration", iteration}, {"fid", row.fid}});

      const auto path = checkpoint_name(ckpt_dir, iteration);
      checkpoint::save_checkpoint(path, snapshot(iteration));
      result.checkpoints.push_back({iteration, path, row.fid});
      result.rows.push_back(row);
      csv << format_metrics_row(row) << '\n' << std::flush;
    }
  }

  if (!result.checkpoints.empty()) {
    std::vector<double> fids;
    for (const auto &c : result.checkpoints) {
      fids.push_back(c.fid);
    }
    result.best = select_best(fids);
  }

  nlohmann::json run = {{"config", cfg.to_json()},
                        {"stats", stats.to_json()},
                        {"baseline_fid", result.baseline_fid},
                        {"r1_applications", result.r1_applications},
                        {"pl_applications", result.pl_applications},
                        {"checkpoints", nlohmann::json::array()}};
  for (const auto &c : result.checkpoints) {
    run["checkpoints"].push_back(
        {{"iteration", c.iteration}, {"path", c.path.filename().string()}, {"fid", c.fid}});
  }
  if (!result.checkpoints.empty()) {
    run["best"] = run["checkpoints"][result.best];
  }
  std::ofstream(out_dir / "run.json") << run.dump(2) << '\n';
  return result;
}

std::vector<fs::path> list_checkpoints(const fs::path &dir) {
  if (!fs::is_directory(dir)) {
    throw IoError("not a directory: " + dir.string());
  }
  std::vector<fs::path> out;
  for (const auto &entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ckpt") {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

CheckpointRecord select_best(const std::vector<fs::path> &checkpoints,
                             const std::vector<Raster> &reference,
                             const metrics::FeatureEmbedder &embedder, int64_t sample_count,
                             uint64_t seed) {
  if (checkpoints.empty()) {
    throw ParameterError("select_best needs at least one checkpoint");
  }
  if (reference.empty()) {
    throw ParameterError("select_best needs a non-empty reference set");
  }
  const auto ref = reference_moments(reference, embedder, sample_count, seed);
  std::vector<CheckpointRecord> records;
  for (const auto &path : checkpoints) {
    auto model = load_gan_model(path);
    if (model.config.resolution != reference.front().rows()) {
      throw ConfigError("checkpoint resolution does not match the reference set");
    }
    const double f = generated_fid(model.generator, model.stats, ref, embedder, sample_count,
                                   derive_seed(seed, 0xF1D));
    records.push_back({model.iteration, path, f});
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const CheckpointRecord &a, const CheckpointRecord &b) {
                     return a.iteration < b.iteration;
                   });
  std::vector<double> fids;
  for (const auto &r : records) {
    fids.push_back(r.fid);
  }
  return records[select_best(fids)];
}

} // namespace octgan::train
