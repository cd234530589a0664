#include "doctest_torch.hpp"

#include "helpers.hpp"
#include "octgan/errors.hpp"
#include "octgan/latent_edit.hpp"
#include "octgan/metrics.hpp"

using namespace octgan;
using latent::LatentDirection;
using latent::LayerRange;

namespace {

GanModel random_model(int64_t resolution, int64_t latent_dim, uint64_t seed) {
  gan::GeneratorConfig c;
  c.latent_dim = latent_dim;
  c.resolution = resolution;
  c.mapping_depth = 2;
  c.max_channels = 32;
  c.min_channels = 16;
  torch::manual_seed(seed);
  GanModel m;
  m.config = c;
  m.generator = gan::Generator(c);
  m.generator->eval();
  m.stats = {0.3, 0.2, 1};
  m.w_mean = gan::compute_w_mean(m.generator, 1000, seed);
  return m;
}

LatentDirection unit_direction(int64_t d, int64_t axis, LayerRange range) {
  LatentDirection dir;
  dir.vector.assign(static_cast<size_t>(d), 0.0);
  dir.vector[static_cast<size_t>(axis)] = 1.0;
  dir.layer_range = range;
  return dir;
}

bool bit_equal(const torch::Tensor &a, const torch::Tensor &b) {
  return a.sizes() == b.sizes() && a.dtype() == b.dtype() &&
         std::memcmp(a.contiguous().data_ptr(), b.contiguous().data_ptr(), a.nbytes()) == 0;
}

} // namespace

TEST_SUITE("latent_edit") {
  TEST_CASE("diagonal matrix factorizes analytically") {
    const auto a = torch::tensor({3.0, 0.0, 0.0, 1.0}, torch::kFloat64).reshape({2, 2});
    const auto dirs = latent::factorize({a}, {0, 1});
    REQUIRE(dirs.size() == 2);
    CHECK(dirs[0].eigenvalue == doctest::Approx(9.0).epsilon(1e-12));
    CHECK(dirs[1].eigenvalue == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(dirs[0].vector[0] == doctest::Approx(1.0));
    CHECK(std::abs(dirs[0].vector[1]) < 1e-12);
    CHECK(std::abs(dirs[1].vector[0]) < 1e-12);
    CHECK(dirs[1].vector[1] == doctest::Approx(1.0));
    CHECK(dirs[0].rank == 0);
    CHECK(dirs[1].rank == 1);
  }

  TEST_CASE("orthogonal matrix has unit eigenvalues") {
    torch::manual_seed(3);
    const auto q = std::get<0>(torch::linalg_qr(torch::randn({6, 6}, torch::kFloat64)));
    for (const auto &d : latent::factorize({q}, {0, 1})) {
      CHECK(d.eigenvalue == doctest::Approx(1.0).epsilon(1e-9));
    }
  }

  TEST_CASE("stacked factorization: orthonormal, sorted, eigenpairs, sign convention") {
    torch::manual_seed(5);
    std::vector<torch::Tensor> mats;
    for (int l = 0; l < 4; ++l) {
      mats.push_back(torch::randn({3 + l, 8}, torch::kFloat64));
    }
    const LayerRange range{1, 3};
    const auto dirs = latent::factorize(mats, range);
    REQUIRE(dirs.size() == 8);

    // Independent oracle: Gram matrix of the row-stacked slice through torch.
    const auto a = torch::cat({mats[1], mats[2]}, 0);
    const auto gram = a.t().mm(a);
    const auto lambda_max = torch::linalg_eigvalsh(gram).max().item<double>();
    CHECK(dirs[0].eigenvalue == doctest::Approx(lambda_max).epsilon(1e-9));

    for (size_t i = 0; i < dirs.size(); ++i) {
      const auto v = torch::tensor(dirs[i].vector, torch::kFloat64);
      CHECK(std::abs(v.norm().item<double>() - 1.0) < 1e-9);
      const auto residual = (gram.mv(v) - v * dirs[i].eigenvalue).abs().max().item<double>();
      CHECK(residual <= 1e-6 * lambda_max);
      CHECK(dirs[i].eigenvalue >= 0.0);
      CHECK(dirs[i].layer_range == range);
      if (i + 1 < dirs.size()) {
        CHECK(dirs[i].eigenvalue >= dirs[i + 1].eigenvalue);
      }
      for (double c : dirs[i].vector) {
        if (std::abs(c) > 1e-12) {
          CHECK(c > 0.0);
          break;
        }
      }
      for (size_t j = i + 1; j < dirs.size(); ++j) {
        const auto w = torch::tensor(dirs[j].vector, torch::kFloat64);
        CHECK(std::abs(v.dot(w).item<double>()) < 1e-6);
      }
    }
  }

  TEST_CASE("invalid layer ranges are rejected") {
    std::vector<torch::Tensor> mats{torch::eye(2, torch::kFloat64)};
    CHECK_THROWS_AS(latent::factorize(mats, {0, 0}), ParameterError);
    CHECK_THROWS_AS(latent::factorize(mats, {1, 1}), ParameterError);
    CHECK_THROWS_AS(latent::factorize(mats, {0, 2}), ParameterError);
    CHECK_THROWS_AS(latent::factorize(mats, {-1, 1}), ParameterError);
  }

  TEST_CASE("factorize reads the generator's style matrices") {
    auto model = random_model(8, 16, 1);
    const auto range = latent::full_range(model.generator);
    CHECK(range.hi == model.config.num_ws());
    const auto dirs = latent::factorize(model.generator, range);
    CHECK(dirs.size() == 16);
    const auto same = latent::factorize(model.generator->style_matrices(), range);
    CHECK(dirs[0].vector == same[0].vector);
    CHECK_THROWS_AS(latent::factorize(model.generator, {0, range.hi + 1}), ParameterError);
  }

  TEST_CASE("apply_edit semantics") {
    torch::manual_seed(7);
    const auto ws = torch::randn({2, 6, 4});
    const auto full = unit_direction(4, 0, {0, 6});

    CHECK(bit_equal(latent::apply_edit(ws, full, 0.0), ws));

    const auto shifted = latent::apply_edit(ws, full, 1.0);
    auto expected = ws.clone();
    expected.select(2, 0).add_(1.0);
    CHECK(bit_equal(shifted, expected));

    const auto partial = latent::apply_edit(ws, unit_direction(4, 2, {0, 2}), 2.5);
    using torch::indexing::Slice;
    CHECK(bit_equal(partial.index({Slice(), Slice(2, 6)}), ws.index({Slice(), Slice(2, 6)})));
    CHECK(!bit_equal(partial.index({Slice(), Slice(0, 2)}), ws.index({Slice(), Slice(0, 2)})));

    CHECK_THROWS_AS(latent::apply_edit(ws, unit_direction(5, 0, {0, 6}), 1.0), ShapeError);
    CHECK_THROWS_AS(latent::apply_edit(ws, unit_direction(4, 0, {0, 7}), 1.0), ParameterError);
  }

  TEST_CASE("direction JSON round trip") {
    LatentDirection d = unit_direction(3, 1, {2, 5});
    d.eigenvalue = 4.25;
    d.rank = 7;
    const auto j = d.to_json();
    CHECK(j.at("layer_range") == nlohmann::json::array({2, 5}));
    CHECK(j.at("rank") == 7);
    const auto back = LatentDirection::from_json(j);
    CHECK(back.vector == d.vector);
    CHECK(back.eigenvalue == d.eigenvalue);
    CHECK(back.layer_range == d.layer_range);
  }

  TEST_CASE("edit_grid strips") {
    auto model = random_model(8, 16, 2);
    const auto dirs = latent::factorize(model.generator, latent::full_range(model.generator));
    const auto baseline = render_seed(model, 11);

    const auto single = latent::edit_grid(model, 11, dirs[0], {0.0});
    REQUIRE(single.frames.size() == 1);
    CHECK(single.frames[0].data() == baseline.data());
    CHECK(single.strip.data() == baseline.data());

    const auto grid = latent::edit_grid(model, 11, dirs[0], {-3.0, 0.0, 3.0});
    REQUIRE(grid.frames.size() == 3);
    CHECK(grid.frames[1].data() == baseline.data());
    CHECK(grid.strip.rows() == 8);
    CHECK(grid.strip.cols() == 24);
    CHECK(grid.strip.at(3, 8 + 5) == baseline.at(3, 5));
    CHECK(grid.strip.at(2, 16 + 1) == grid.frames[2].at(2, 1));

    const auto truncated = latent::edit_grid(model, 11, dirs[0], {0.0}, 0.5);
    CHECK(truncated.frames[0].data() == render_seed(model, 11, 0.5).data());

    CHECK_THROWS_AS(latent::edit_grid(model, 11, dirs[0], {}), ParameterError);
    CHECK_THROWS_AS(latent::edit_grid(model, 11, dirs[0], {1.0, 0.0}), ParameterError);
  }

  TEST_CASE("perceptual change grows with edit strength along the top direction") {
    auto model = random_model(16, 32, 4);
    const auto dirs = latent::factorize(model.generator, latent::full_range(model.generator));
    const std::vector<double> alphas{0.0, 1.0, 2.0, 4.0};
    int monotone = 0;
    for (uint64_t seed = 0; seed < 100; ++seed) {
      const auto grid = latent::edit_grid(model, seed, dirs[0], alphas);
      double prev = -1.0;
      bool ok = true;
      for (const auto &frame : grid.frames) {
        const double d = metrics::perceptual_distance(grid.frames[0], frame);
        ok = ok && d >= prev;
        prev = d;
      }
      monotone += ok ? 1 : 0;
    }
    MESSAGE("monotone seeds: " << monotone << "/100");
    CHECK(monotone >= 90);
  }
}
