#include "octgan/model.hpp"

#include "octgan/errors.hpp"
#include "octgan/rng.hpp"

namespace octgan {

checkpoint::Checkpoint make_gan_checkpoint(const gan::GeneratorConfig &config,
                                           const gan::Generator &inference_generator,
                                           const phantom::DatasetStats &stats,
                                           const torch::Tensor &w_mean, int64_t iteration,
                                           const nlohmann::json &train_config) {
  checkpoint::Checkpoint ckpt;
  ckpt.manifest.model_kind = "gan";
  ckpt.manifest.iteration = iteration;
  ckpt.manifest.config = {{"generator", config.to_json()}, {"train", train_config}};
  ckpt.manifest.extra = {{"stats", stats.to_json()}};
  ckpt.add_module("g_ema.", *inference_generator);
  ckpt.add("w_mean", w_mean);
  return ckpt;
}

GanModel load_gan_model(const checkpoint::Checkpoint &ckpt) {
  if (ckpt.manifest.model_kind != "gan") {
    throw FormatError("checkpoint is not a GAN model (kind " + ckpt.manifest.model_kind + ")");
  }
  GanModel model;
  model.config = gan::GeneratorConfig::from_json(ckpt.manifest.config.at("generator"));
  model.generator = gan::Generator(model.config);
  ckpt.load_module("g_ema.", *model.generator);
  model.generator->eval();
  model.stats = phantom::DatasetStats::from_json(ckpt.manifest.extra.at("stats"));
  model.w_mean = ckpt.get("w_mean").clone();
  model.iteration = ckpt.manifest.iteration;
  model.metric_history = ckpt.manifest.metric_history;
  return model;
}

GanModel load_gan_model(const std::filesystem::path &path) {
  return load_gan_model(checkpoint::load_checkpoint(path));
}

torch::Tensor latent_for_seed(GanModel &model, uint64_t seed, double psi) {
  torch::NoGradGuard guard;
  const auto z = gan::sample_z(1, model.config.latent_dim, seed);
  auto ws = model.generator->map_latent(z);
  if (psi != 1.0) {
    ws = gan::truncate_w(ws, psi, model.w_mean);
  }
  return ws;
}

Raster render_ws(GanModel &model, const torch::Tensor &ws, uint64_t noise_seed) {
  torch::NoGradGuard guard;
  auto image = model.generator->synthesize(ws, gan::NoiseSpec::seeded(noise_seed)).image;
  image = phantom::denormalize(image, model.stats).clamp(0.0, 1.0);
  return Raster::from_tensor(image[0][0]);
}

Raster render_seed(GanModel &model, uint64_t seed, double psi) {
  return render_ws(model, latent_for_seed(model, seed, psi), seed);
}

torch::Tensor sample_images(gan::Generator &generator, const phantom::DatasetStats &stats,
                            int64_t n, uint64_t seed) {
  if (n < 1) {
    throw ParameterError("sample count must be >= 1");
  }
  torch::NoGradGuard guard;
  const auto d = generator->config().latent_dim;
  std::vector<torch::Tensor> parts;
  constexpr int64_t kChunk = 100;
  for (int64_t start = 0, chunk = 0; start < n; start += kChunk, ++chunk) {
    const auto len = std::min(kChunk, n - start);
    const auto z = gan::sample_z(len, d, derive_seed(seed, 0x2A, static_cast<uint64_t>(chunk)));
    const auto ws = generator->map_latent(z);
    const auto noise =
        gan::NoiseSpec::seeded(derive_seed(seed, 0x2B, static_cast<uint64_t>(chunk)));
    parts.push_back(generator->synthesize(ws, noise).image);
  }
  return phantom::denormalize(torch::cat(parts, 0), stats).clamp(0.0, 1.0);
}

} // namespace octgan
