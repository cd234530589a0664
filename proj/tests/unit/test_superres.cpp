#include "doctest_torch.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "octgan/errors.hpp"
#include "octgan/metrics.hpp"
#include "octgan/phantom.hpp"
#include "octgan/superres.hpp"

using namespace octgan;
using resample::Kernel;

namespace {

sr::SRConfig tiny_config() {
  sr::SRConfig c;
  c.patch_size = 16;
  c.blocks = 1;
  c.features = 8;
  c.growth = 4;
  c.layers_per_block = 2;
  c.iterations = 50;
  c.batch_size = 4;
  c.checkpoint_every = 25;
  c.seed = 3;
  return c;
}

std::vector<Raster> phantoms(int64_t n, int64_t size, uint64_t seed) {
  phantom::DatasetSpec spec;
  spec.n = n;
  spec.size = size;
  return phantom::render_dataset(spec, seed).rasters();
}

std::string slurp(const std::filesystem::path &p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Raster constant(int64_t rows, int64_t cols, float v) { return Raster(rows, cols, v); }

} // namespace

TEST_SUITE("superres") {
  TEST_CASE("patch counts and offsets") {
    CHECK(sr::extract_patches(Raster(256, 256), 128, 128).count() == 4);
    CHECK(sr::extract_patches(Raster(512, 512), 128, 128).count() == 16);

    const auto img = testutil::random_raster(10, 12, 1);
    const auto set = sr::extract_patches(img, 4, 3, 7);
    CHECK(set.count() == 9);  // floor((10-4)/3+1) * floor((12-4)/3+1)
    for (size_t i = 0; i < set.count(); ++i) {
      const auto [r, c] = set.offsets[i];
      CHECK(r + 4 <= 10);
      CHECK(c + 4 <= 12);
      CHECK(set.source_ids[i] == 7);
      CHECK(set.patches[i].at(1, 2) == img.at(r + 1, c + 2));
    }

    const auto whole = sr::extract_patches(img, 10, 1);
    CHECK(whole.count() == 3);
    const auto square = testutil::random_raster(8, 8, 2);
    const auto one = sr::extract_patches(square, 8, 8);
    REQUIRE(one.count() == 1);
    CHECK(one.patches[0] == square);

    CHECK_THROWS_AS(sr::extract_patches(square, 9, 1), ParameterError);
    CHECK_THROWS_AS(sr::extract_patches(square, 4, 0), ParameterError);

    const auto multi = sr::extract_patches(std::vector<Raster>{square, img}, 4, 4);
    CHECK(multi.count() == 4 + 6);
    CHECK(multi.source_ids.back() == 1);
  }

  TEST_CASE("mean filter") {
    sr::PatchSet set;
    set.size = 4;
    for (float v : {0.0f, 1.0f, 0.03f, 0.06f, 0.5f}) {
      set.patches.push_back(constant(4, 4, v));
      set.source_ids.push_back(0);
      set.offsets.emplace_back(0, 0);
    }
    const auto kept = sr::filter_patches(set, 0.05);
    REQUIRE(kept.count() == 3);
    CHECK(kept.patches[0].at(0, 0) == 1.0f);
    CHECK(sr::filter_patches(set, 0.0).count() == 4);
    CHECK_THROWS_AS(sr::filter_patches(set, 1.0), ParameterError);
    CHECK_THROWS_AS(sr::filter_patches(set, -0.1), ParameterError);

    const auto random = sr::extract_patches(testutil::random_raster(64, 64, 5), 4, 4);
    size_t prev = random.count() + 1;
    for (double tau : {0.0, 0.2, 0.4, 0.5, 0.6, 0.8, 0.99}) {
      const auto k = sr::filter_patches(random, tau);
      CHECK(k.count() <= prev);
      prev = k.count();
      for (const auto &p : k.patches) {
        CHECK(p.mean() > tau);
      }
    }
  }

  TEST_CASE("classical upsampling") {
    const Raster small(2, 2, std::vector<float>{1, 2, 3, 4});
    const auto up = sr::upsample_classical(small, 2, Kernel::nearest);
    CHECK(up.data() == std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4});

    for (const char *kind : {"nearest", "bilinear", "bicubic", "lanczos"}) {
      const auto c = sr::upsample_classical(constant(7, 5, 0.7f), 2, kind);
      CHECK(c.rows() == 14);
      CHECK(c.cols() == 10);
      CHECK(testutil::max_abs_diff(c, constant(14, 10, 0.7f)) < 1e-6);
    }
    CHECK_THROWS_AS(sr::upsample_classical(small, 2, "cubic"), ParameterError);

    Raster ramp(9, 11);
    for (int64_t r = 0; r < 9; ++r) {
      for (int64_t c = 0; c < 11; ++c) {
        ramp.at(r, c) = static_cast<float>(0.05 * r + 0.03 * c);
      }
    }
    const auto ours = sr::upsample_classical(ramp, 2, Kernel::bicubic);
    CHECK(testutil::max_abs_diff(ours, testutil::reference_bicubic(ramp, 18, 22, -0.5)) < 1e-4);
    const auto noisy = testutil::random_raster(6, 6, 9);
    CHECK(testutil::max_abs_diff(sr::upsample_classical(noisy, 2, Kernel::bicubic),
                                 testutil::reference_bicubic(noisy, 12, 12, -0.5)) < 1e-4);
  }

  TEST_CASE("downsampling") {
    for (auto kind : {Kernel::nearest, Kernel::bilinear, Kernel::bicubic, Kernel::lanczos}) {
      const auto d = sr::downsample2x(constant(8, 6, 0.3f), kind);
      CHECK(d.rows() == 4);
      CHECK(d.cols() == 3);
      CHECK(testutil::max_abs_diff(d, constant(4, 3, 0.3f)) < 1e-6);
    }
    const auto x = testutil::random_raster(5, 7, 4);
    const auto back = sr::downsample2x(sr::upsample_classical(x, 2, Kernel::nearest), Kernel::nearest);
    CHECK(back == x);

    const auto y = testutil::random_raster(6, 4, 8);
    const auto mean = sr::downsample2x(y, Kernel::bilinear);
    CHECK(mean.at(1, 1) == doctest::Approx((y.at(2, 2) + y.at(2, 3) + y.at(3, 2) + y.at(3, 3)) / 4.0)
                               .epsilon(1e-6));

    auto ph = phantoms(1, 64, 11)[0];
    auto small = sr::downsample2x(ph);
    small.clamp(0.0f, 1.0f);
    CHECK(small.rows() == 32);
    CHECK(small.cols() == 32);
    CHECK(*std::min_element(small.data().begin(), small.data().end()) >= 0.0f);
    CHECK(*std::max_element(small.data().begin(), small.data().end()) <= 1.0f);

    CHECK_THROWS_AS(sr::downsample2x(Raster(7, 8)), ShapeError);
    CHECK_THROWS_AS(sr::downsample2x(Raster(8, 5)), ShapeError);
  }

  TEST_CASE("config JSON") {
    const auto j = tiny_config().to_json();
    CHECK(sr::SRConfig::from_json(j).to_json() == j);
    auto bad = j;
    bad["adversarial"] = true;
    CHECK_THROWS_AS(sr::SRConfig::from_json(bad), ConfigError);
    bad = j;
    bad["scale"] = 4;
    CHECK_THROWS_AS(sr::SRConfig::from_json(bad), ConfigError);
    bad = j;
    bad["mean_threshold"] = 1.0;
    CHECK_THROWS_AS(sr::SRConfig::from_json(bad), ConfigError);
  }

  TEST_CASE("network without its residual branch is bilinear upsampling") {
    auto cfg = tiny_config();
    cfg.res_scale = 0.0;
    torch::manual_seed(1);
    sr::SrModel model{cfg, sr::ResidualDenseNet(cfg), 0};
    const auto x = testutil::random_raster(9, 7, 3);
    const auto out = sr::sr_upscale(model, x);
    CHECK(testutil::max_abs_diff(out, sr::upsample_classical(x, 2, Kernel::bilinear)) < 1e-6);

    // A fresh network starts on the same skip path because its output layer is zeroed.
    cfg.res_scale = 1.0;
    sr::SrModel fresh{cfg, sr::ResidualDenseNet(cfg), 0};
    CHECK(testutil::max_abs_diff(sr::sr_upscale(fresh, x), out) < 1e-6);
  }

  TEST_CASE("upscaling is deterministic, clamped and checkpointable") {
    auto cfg = tiny_config();
    torch::manual_seed(2);
    sr::ResidualDenseNet net(cfg);
    {
      torch::NoGradGuard guard;
      for (auto &p : net->parameters()) {
        p.normal_(0.0, 0.5);
      }
    }
    sr::SrModel model{cfg, net, 0};
    model.net->eval();
    const auto x = testutil::random_raster(8, 8, 6);
    const auto a = sr::sr_upscale(model, x);
    CHECK(a == sr::sr_upscale(model, x));
    CHECK(a.rows() == 16);

    torch::manual_seed(4);
    const auto batch = sr::sr_upscale(model, torch::rand({100, 1, 8, 8}));
    CHECK(batch.sizes() == torch::IntArrayRef({100, 1, 16, 16}));
    CHECK(batch.min().item<float>() >= 0.0f);
    CHECK(batch.max().item<float>() <= 1.0f);
    CHECK(batch.lt(1.0).logical_and(batch.gt(0.0)).any().item<bool>());

    testutil::TempDir dir("sr_ckpt");
    checkpoint::save_checkpoint(dir.path() / "m.ckpt", sr::make_sr_checkpoint(cfg, net, 12));
    const auto loaded = sr::load_sr_model(dir.path() / "m.ckpt");
    CHECK(loaded.iteration == 12);
    CHECK(sr::sr_upscale(loaded, x) == a);

    checkpoint::Checkpoint other;
    other.manifest.model_kind = "gan";
    CHECK_THROWS_AS(sr::load_sr_model(other), FormatError);

    auto wrong = model;
    wrong.config.scale = 4;
    CHECK_THROWS_AS(sr::sr_upscale(wrong, x), ConfigError);
    CHECK_THROWS_AS(sr::sr_upscale(model, torch::rand({1, 3, 8, 8})), ShapeError);
  }

  TEST_CASE("training smoke run is finite, checkpointed and reproducible") {
    const auto train = phantoms(8, 32, 1);
    const auto val = phantoms(4, 32, 2);
    testutil::TempDir a("sr_a");
    testutil::TempDir b("sr_b");
    const auto ra = sr::train_sr(train, val, tiny_config(), a.path());
    REQUIRE(ra.rows.size() == 2);
    REQUIRE(ra.checkpoints.size() == 2);
    for (const auto &row : ra.rows) {
      CHECK(std::isfinite(row.loss));
      CHECK(std::isfinite(row.val_perceptual));
    }
    CHECK(std::filesystem::exists(ra.checkpoints[1].path));
    CHECK(std::filesystem::exists(a.path() / "run.json"));
    const auto model = sr::load_sr_model(ra.checkpoints[ra.best].path);
    CHECK(model.iteration == ra.checkpoints[ra.best].iteration);
    CHECK(ra.checkpoints[ra.best].val_perceptual <= ra.checkpoints[1 - ra.best].val_perceptual);

    sr::train_sr(train, val, tiny_config(), b.path());
    const auto csv = slurp(a.path() / "metrics.csv");
    CHECK(csv.rfind(std::string(sr::kSrMetricsHeader) + "\n", 0) == 0);
    CHECK(csv == slurp(b.path() / "metrics.csv"));
  }

  TEST_CASE("short training beats bilinear in validation L1") {
    auto cfg = tiny_config();
    cfg.iterations = 300;
    cfg.checkpoint_every = 300;
    cfg.features = 16;
    cfg.growth = 8;
    cfg.blocks = 2;
    testutil::TempDir dir("sr_short");
    const auto r = sr::train_sr(phantoms(24, 32, 5), phantoms(8, 32, 6), cfg, dir.path());
    MESSAGE("sr val L1 " << r.checkpoints.back().val_l1 << " vs bilinear " << r.bilinear_val_l1);
    CHECK(r.checkpoints.back().val_l1 < r.bilinear_val_l1);
  }

  TEST_CASE("training rejects a set with no usable patches") {
    testutil::TempDir dir("sr_empty");
    std::vector<Raster> dark(3, Raster(32, 32, 0.01f));
    CHECK_THROWS_AS(sr::train_sr(dark, dark, tiny_config(), dir.path()), ParameterError);
    CHECK_THROWS_AS(sr::train_sr(phantoms(2, 32, 1), {}, tiny_config(), dir.path()),
                    ParameterError);
  }

  TEST_CASE("upsampler comparison table") {
    const auto val = phantoms(6, 32, 9);
    const auto identity = sr::score_method("identity", val, [](const Raster &x) { return x; });
    CHECK(identity.mean_perceptual == 0.0);
    CHECK(identity.std == 0.0);

    auto cfg = tiny_config();
    torch::manual_seed(0);
    sr::SrModel model{cfg, sr::ResidualDenseNet(cfg), 0};
    const auto rows = sr::compare_upsamplers(val, model);
    std::set<std::string> names;
    for (const auto &r : rows) {
      names.insert(r.method);
      CHECK(r.mean_perceptual > 0.0);
    }
    CHECK(rows.size() == 5);
    CHECK(names == std::set<std::string>{"nearest", "bilinear", "bicubic", "lanczos", "sr"});

    const auto again = sr::compare_upsamplers(val, model);
    for (size_t i = 0; i < rows.size(); ++i) {
      CHECK(again[i].mean_perceptual == rows[i].mean_perceptual);
      CHECK(again[i].std == rows[i].std);
    }

    testutil::TempDir dir("sr_cmp");
    sr::write_comparison_csv(dir.path() / "cmp.csv", rows);
    const auto text = slurp(dir.path() / "cmp.csv");
    CHECK(text.rfind("method,mean_perceptual,std\nnearest,", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);
  }
}
