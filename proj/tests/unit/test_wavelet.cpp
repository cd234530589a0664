#include "doctest_torch.hpp"

#include "octgan/errors.hpp"
#include "octgan/wavelet.hpp"

using namespace octgan;
using wavelet::SubbandStack;

namespace {

double max_abs(const torch::Tensor &t) { return t.abs().max().item<double>(); }

SubbandStack random_stack(std::vector<int64_t> shape, uint64_t seed) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto r = [&] { return at::randn(shape, gen, torch::kFloat64); };
  return {r(), r(), r(), r()};
}

} // namespace

TEST_SUITE("wavelet") {
  TEST_CASE("constant 2x2 block") {
    const auto b = wavelet::dwt2(torch::ones({2, 2}));
    CHECK(b.ll.item<float>() == 2.0f);
    CHECK(b.lh.item<float>() == 0.0f);
    CHECK(b.hl.item<float>() == 0.0f);
    CHECK(b.hh.item<float>() == 0.0f);
  }

  TEST_CASE("single impulse spreads equally") {
    const auto b = wavelet::dwt2(torch::tensor({{1.0f, 0.0f}, {0.0f, 0.0f}}));
    CHECK(b.ll.item<float>() == 0.5f);
    CHECK(b.lh.item<float>() == 0.5f);
    CHECK(b.hl.item<float>() == 0.5f);
    CHECK(b.hh.item<float>() == 0.5f);
  }

  TEST_CASE("subband sign convention") {
    // [a b; c d] = [1 2; 3 4]
    const auto b = wavelet::dwt2(torch::tensor({{1.0, 2.0}, {3.0, 4.0}}, torch::kFloat64));
    CHECK(b.ll.item<double>() == 5.0);
    CHECK(b.lh.item<double>() == -2.0);
    CHECK(b.hl.item<double>() == -1.0);
    CHECK(b.hh.item<double>() == 0.0);
  }

  TEST_CASE("inverse of the constant example") {
    SubbandStack s{torch::full({1, 1}, 2.0f), torch::zeros({1, 1}), torch::zeros({1, 1}),
                   torch::zeros({1, 1})};
    CHECK(torch::equal(wavelet::iwt2(s), torch::ones({2, 2})));
    SubbandStack z{torch::zeros({3, 3}), torch::zeros({3, 3}), torch::zeros({3, 3}),
                   torch::zeros({3, 3})};
    CHECK(torch::equal(wavelet::iwt2(z), torch::zeros({6, 6})));
  }

  TEST_CASE("perfect reconstruction and energy conservation") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(17);
    const auto x = at::rand({20, 1, 64, 64}, gen);
    const auto b = wavelet::dwt2(x);
    CHECK(max_abs(wavelet::iwt2(b) - x) < 1e-6);
    const double ex = x.to(torch::kFloat64).square().sum().item<double>();
    const double eb = (b.ll.to(torch::kFloat64).square().sum() + b.lh.to(torch::kFloat64).square().sum() +
                       b.hl.to(torch::kFloat64).square().sum() + b.hh.to(torch::kFloat64).square().sum())
                          .item<double>();
    CHECK(std::abs(ex - eb) / ex < 1e-6);
  }

  TEST_CASE("dwt2 after iwt2 is the identity on coefficients") {
    const auto s = random_stack({2, 3, 8, 8}, 4);
    const auto back = wavelet::dwt2(wavelet::iwt2(s));
    CHECK(max_abs(back.ll - s.ll) < 1e-12);
    CHECK(max_abs(back.lh - s.lh) < 1e-12);
    CHECK(max_abs(back.hl - s.hl) < 1e-12);
    CHECK(max_abs(back.hh - s.hh) < 1e-12);
  }

  TEST_CASE("channels transform independently") {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
    const auto x = at::rand({1, 3, 8, 8}, gen);
    const auto all = wavelet::dwt2(x);
    const auto one = wavelet::dwt2(x.index({torch::indexing::Slice(), torch::indexing::Slice(1, 2)}));
    CHECK(torch::equal(all.ll.index({torch::indexing::Slice(), torch::indexing::Slice(1, 2)}), one.ll));
  }

  TEST_CASE("shape errors") {
    CHECK_THROWS_AS(wavelet::dwt2(torch::zeros({5, 4})), ShapeError);
    CHECK_THROWS_AS(wavelet::dwt2(torch::zeros({4, 7})), ShapeError);
    SubbandStack bad{torch::zeros({2, 2}), torch::zeros({2, 2}), torch::zeros({2, 3}),
                     torch::zeros({2, 2})};
    CHECK_THROWS_AS(wavelet::iwt2(bad), ShapeError);
  }

  TEST_CASE("pack and unpack") {
    const auto s = random_stack({2, 3, 4, 4}, 8);
    const auto packed = s.pack();
    CHECK(packed.sizes() == torch::IntArrayRef({2, 12, 4, 4}));
    const auto u = SubbandStack::unpack(packed);
    CHECK(torch::equal(u.hl, s.hl));
    CHECK(torch::equal(packed.index({torch::indexing::Slice(), torch::indexing::Slice(0, 3)}), s.ll));
  }

  TEST_CASE("wavelet upsample of a constant low band keeps its value") {
    // A constant LL band c is the image c/2; bilinear keeps c/2 and the finer dwt2 returns c.
    SubbandStack s{torch::full({1, 1, 4, 4}, 3.0), torch::zeros({1, 1, 4, 4}, torch::kFloat64),
                   torch::zeros({1, 1, 4, 4}, torch::kFloat64),
                   torch::zeros({1, 1, 4, 4}, torch::kFloat64)};
    s.ll = s.ll.to(torch::kFloat64);
    const auto up = wavelet::wavelet_upsample(s);
    CHECK(up.ll.sizes() == torch::IntArrayRef({1, 1, 8, 8}));
    CHECK(max_abs(up.ll - 3.0) < 1e-12);
    CHECK(max_abs(up.lh) < 1e-12);
    CHECK(max_abs(up.hl) < 1e-12);
    CHECK(max_abs(up.hh) < 1e-12);
  }

  TEST_CASE("wavelet upsample is linear") {
    const auto a = random_stack({2, 2, 4, 4}, 1);
    const auto b = random_stack({2, 2, 4, 4}, 2);
    const auto fa = wavelet::wavelet_upsample(a);
    const auto fb = wavelet::wavelet_upsample(b);
    const auto fab = wavelet::wavelet_upsample(a + b);
    CHECK(max_abs(fab.ll - fa.ll - fb.ll) < 1e-6);
    CHECK(max_abs(fab.hh - fa.hh - fb.hh) < 1e-6);
    const auto zero = torch::zeros({1, 1, 2, 2});
    const auto z = wavelet::wavelet_upsample({zero, zero, zero, zero});
    CHECK(max_abs(z.ll) == 0.0);
    CHECK(max_abs(z.hh) == 0.0);
  }

  TEST_CASE("bilinear_up2 preserves constants") {
    const auto x = torch::full({1, 1, 3, 5}, 0.25);
    const auto y = wavelet::bilinear_up2(x);
    CHECK(y.sizes() == torch::IntArrayRef({1, 1, 6, 10}));
    CHECK(max_abs(y - 0.25) < 1e-15);
  }
}
