#include "doctest_torch.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "octgan/errors.hpp"
#include "octgan/phantom.hpp"
#include "octgan/png_io.hpp"

using namespace octgan;
using phantom::PhantomParams;

namespace {

PhantomParams noise_free(int64_t size) {
  auto p = PhantomParams::for_size(size);
  p.speckle_shape = std::numeric_limits<double>::infinity();
  return p;
}

} // namespace

TEST_SUITE("phantom") {
  TEST_CASE("noise-free base case draws two arcs over a dark background") {
    const auto p = noise_free(64);
    const auto a = phantom::generate_phantom(p, 1);
    const auto b = phantom::generate_phantom(p, 2);
    CHECK_FALSE(a.label.any());
    CHECK(a.image.pixels == b.image.pixels);  // no noise, so the seed is irrelevant
    CHECK_NOTHROW(a.image.validate());

    const auto &px = a.image.pixels;
    const auto col = static_cast<int64_t>(p.center_col);
    const auto ant = static_cast<int64_t>(std::floor(p.anterior_row(p.center_col)));
    const auto post = static_cast<int64_t>(std::floor(p.posterior_row(p.center_col)));
    CHECK(px.at(ant, col) > 0.4f);
    CHECK(px.at(post, col) > 0.25f);
    CHECK(px.at(0, col) < 0.1f);
    CHECK(px.at(63, 0) < 0.1f);
    // Stroma between the surfaces is brighter than the background but darker than the lines.
    const auto mid = (ant + post) / 2;
    CHECK(px.at(mid, col) > px.at(0, col));
    CHECK(px.at(mid, col) < px.at(ant, col));
  }

  TEST_CASE("rendering is a pure function of params and seed") {
    auto p = PhantomParams::for_size(48);
    p.has_flare = true;
    p.has_ring_segments = true;
    const auto a = phantom::generate_phantom(p, 99);
    const auto b = phantom::generate_phantom(p, 99);
    const auto c = phantom::generate_phantom(p, 100);
    CHECK(a.image.pixels == b.image.pixels);
    CHECK_FALSE(a.image.pixels == c.image.pixels);
  }

  TEST_CASE("ICL changes pixels only below the posterior surface") {
    for (uint64_t seed : {1u, 7u, 23u}) {
      auto p = PhantomParams::for_size(64);
      const auto plain = phantom::generate_phantom(p, seed).image.pixels;
      p.has_icl = true;
      const auto with = phantom::generate_phantom(p, seed);
      CHECK(with.label.icl);
      int64_t changed = 0;
      for (int64_t r = 0; r < 64; ++r) {
        for (int64_t c = 0; c < 64; ++c) {
          if (plain.at(r, c) != with.image.pixels.at(r, c)) {
            ++changed;
            REQUIRE(static_cast<double>(r) > p.posterior_row(c + 0.5) + 1.0);
          }
        }
      }
      CHECK(changed > 20);
    }
  }

  TEST_CASE("labels mirror the feature flags") {
    for (int mask = 0; mask < 32; ++mask) {
      auto p = PhantomParams::for_size(32);
      ConditionFlags f;
      f.icl = mask & 1;
      f.ring_segments = mask & 2;
      f.eyelid = mask & 4;
      f.flare = mask & 8;
      f.haze = mask & 16;
      p.set_flags(f);
      const auto out = phantom::generate_phantom(p, static_cast<uint64_t>(mask));
      CHECK(out.label == f);
      CHECK(out.image.label.value() == f);
      CHECK_NOTHROW(out.image.validate());
    }
  }

  TEST_CASE("invalid parameters are rejected") {
    auto p = PhantomParams::for_size(64);
    p.anterior_radius = -1.0;
    CHECK_THROWS_AS(phantom::generate_phantom(p, 0), ParameterError);
    p = PhantomParams::for_size(64);
    p.corneal_thickness = 0.0;
    CHECK_THROWS_AS(phantom::generate_phantom(p, 0), ParameterError);
    p = PhantomParams::for_size(64);
    p.posterior_radius = 5.0;  // tight posterior arc crosses the anterior one
    CHECK_THROWS_AS(phantom::generate_phantom(p, 0), ParameterError);
    p = PhantomParams::for_size(64);
    p.speckle_shape = 0.0;
    CHECK_THROWS_AS(phantom::generate_phantom(p, 0), ParameterError);
  }

  TEST_CASE("params json round trip") {
    auto p = noise_free(40);
    p.has_haze = true;
    p.width_class = WidthClass::narrow10mm;
    const auto j = p.to_json();
    CHECK(j.at("speckle_shape").is_null());
    const auto q = PhantomParams::from_json(j);
    CHECK(q.to_json() == j);
    CHECK(std::isinf(q.speckle_shape));
    auto bad = j;
    bad["has_cataract"] = true;
    CHECK_THROWS_AS(PhantomParams::from_json(bad), ConfigError);
  }

  TEST_CASE("class mix of one labels every image") {
    phantom::DatasetSpec spec;
    spec.n = 100;
    spec.size = 32;
    spec.class_mix = {{"icl", 1.0}};
    const auto ds = phantom::render_dataset(spec, 3);
    REQUIRE(ds.size() == 100);
    for (const auto &img : ds.images) {
      CHECK(img.label->icl);
      CHECK_FALSE(img.label->flare);  // absent keys have probability zero
    }
  }

  TEST_CASE("table frequency for ICL stays inside the 3-sigma binomial band") {
    phantom::DatasetSpec spec;
    spec.n = 1000;
    spec.size = 32;
    spec.class_mix = {{"icl", 0.012}};
    const auto ds = phantom::render_dataset(spec, 11);
    int count = 0;
    for (const auto &img : ds.images) count += img.label->icl ? 1 : 0;
    CHECK(count >= 1);
    CHECK(count <= 30);
  }

  TEST_CASE("default mix follows the survey marginals") {
    const auto mix = phantom::default_class_mix();
    CHECK(mix.at("icl") == 0.012);
    CHECK(mix.at("ring_segments") == 0.112);
    CHECK(mix.at("haze") == 0.080);
  }

  TEST_CASE("dataset spec validation") {
    phantom::DatasetSpec spec;
    spec.n = 0;
    CHECK_THROWS_AS(phantom::render_dataset(spec, 0), ParameterError);
    spec.n = 5;
    spec.class_mix = {{"icl", 1.5}};
    CHECK_THROWS_AS(phantom::render_dataset(spec, 0), ParameterError);
    spec.class_mix = {{"glaucoma", 0.5}};
    CHECK_THROWS(phantom::render_dataset(spec, 0));
  }

  TEST_CASE("dataset directory layout and reload") {
    testutil::TempDir dir("dataset");
    phantom::DatasetSpec spec;
    spec.n = 12;
    spec.size = 32;
    const auto ds = phantom::generate_dataset(spec, 5, dir.path());
    CHECK(std::filesystem::exists(dir.path() / "images" / "000000.png"));
    CHECK(std::filesystem::exists(dir.path() / "images" / "000011.png"));
    CHECK(std::filesystem::exists(dir.path() / "stats.json"));

    std::ifstream labels(dir.path() / "labels.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(labels, line)) {
      const auto rec = nlohmann::json::parse(line);
      CHECK(rec.contains("file"));
      CHECK(rec.contains("flags"));
      CHECK(rec.contains("seed"));
      CHECK(rec.contains("params"));
      const auto params = PhantomParams::from_json(rec.at("params"));
      CHECK(params.flags() == ConditionFlags::from_names(rec.at("flags")));
      ++lines;
    }
    CHECK(lines == 12);

    const auto back = phantom::load_dataset(dir.path());
    REQUIRE(back.size() == 12);
    for (size_t i = 0; i < back.size(); ++i) {
      CHECK(back.images[i].pixels == ds.images[i].pixels);
      CHECK(back.images[i].label == ds.images[i].label);
    }
    // The same seed renders the same dataset in memory.
    const auto again = phantom::render_dataset(spec, 5);
    CHECK(phantom::compute_stats(again.rasters()).mean ==
          doctest::Approx(phantom::compute_stats(ds.rasters()).mean).epsilon(1e-3));
  }

  TEST_CASE("ingest passes through matching sizes and resizes with bicubic") {
    testutil::TempDir dir("ingest");
    const auto img64 = testutil::random_raster(64, 64, 8);
    io::write_png(dir.path() / "a.png", img64);
    Raster ramp(128, 128);
    for (int64_t r = 0; r < 128; ++r)
      for (int64_t c = 0; c < 128; ++c) ramp.at(r, c) = static_cast<float>(r + c) / 254.0f;
    io::write_png(dir.path() / "b.png", ramp);
    io::write_png(dir.path() / "c.png", Raster(50, 50, 0.6f));
    std::ofstream(dir.path() / "d.png") << "not an image";

    const auto ds = phantom::ingest_folder(dir.path(), 64);
    REQUIRE(ds.size() == 3);
    CHECK(ds.warnings.size() == 1);
    CHECK(ds.images[0].pixels == io::read_image(dir.path() / "a.png"));
    const auto ramp_png = io::read_image(dir.path() / "b.png");
    CHECK(testutil::max_abs_diff(ds.images[1].pixels,
                                 testutil::reference_bicubic(ramp_png, 64, 64, -0.75)) < 1e-4);
    const float level = io::read_image(dir.path() / "c.png").at(0, 0);
    for (float v : ds.images[2].pixels.data()) {
      REQUIRE(v == doctest::Approx(level).epsilon(1e-6));
    }
    for (const auto &img : ds.images) {
      CHECK(img.provenance == Provenance::real);
    }
  }

  TEST_CASE("ingest of an empty folder fails") {
    testutil::TempDir dir("empty");
    CHECK_THROWS_AS(phantom::ingest_folder(dir.path(), 64), IoError);
  }

  TEST_CASE("normalization") {
    CHECK_THROWS_AS(phantom::compute_stats(std::vector<Raster>{Raster(4, 4, 0.3f)}), NumericError);
    phantom::DatasetStats st{0.5, 0.25, 1};
    CHECK(phantom::normalize(Raster(1, 1, 0.5f), st).at(0, 0) == 0.0f);

    phantom::DatasetSpec spec;
    spec.n = 40;
    spec.size = 32;
    const auto rasters = phantom::render_dataset(spec, 2).rasters();
    const auto stats = phantom::compute_stats(rasters);
    CHECK(stats.count == 40);
    double sum = 0.0, sq = 0.0, n = 0.0;
    for (const auto &r : rasters) {
      const auto z = phantom::normalize(r, stats);
      const auto back = phantom::denormalize(z, stats);
      CHECK(testutil::max_abs_diff(back, r) < 1e-6);
      for (float v : z.data()) {
        sum += v;
        sq += static_cast<double>(v) * v;
        n += 1.0;
      }
    }
    const double mean = sum / n;
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(std::sqrt(sq / n - mean * mean) - 1.0) < 1e-6);

    const auto t = stack_rasters(rasters);
    CHECK(torch::allclose(phantom::denormalize(phantom::normalize(t, stats), stats), t, 0, 1e-6));
  }

  TEST_CASE("stats json validation") {
    CHECK_THROWS(phantom::DatasetStats::from_json({{"mean", 0.1}, {"std", 0.0}, {"count", 3}}));
    CHECK_THROWS(phantom::DatasetStats::from_json({{"mean", 0.1}, {"std", 1.0}, {"count", 0}}));
    const phantom::DatasetStats s{0.2, 0.3, 7};
    const auto back = phantom::DatasetStats::from_json(s.to_json());
    CHECK(back.mean == s.mean);
    CHECK(back.std == s.std);
    CHECK(back.count == s.count);
  }
}
