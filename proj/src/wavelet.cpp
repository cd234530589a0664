#include "octgan/wavelet.hpp"

#include "octgan/errors.hpp"

namespace F = torch::nn::functional;
using torch::indexing::Slice;
using torch::indexing::Ellipsis;
using torch::indexing::None;

namespace octgan::wavelet {

void SubbandStack::validate() const {
  if (!ll.defined() || !lh.defined() || !hl.defined() || !hh.defined()) {
    throw ShapeError("subband stack has undefined bands");
  }
  if (ll.sizes() != lh.sizes() || ll.sizes() != hl.sizes() || ll.sizes() != hh.sizes()) {
    throw ShapeError("subband shapes differ");
  }
  if (ll.dim() < 2) {
    throw ShapeError("subbands must be at least 2-D");
  }
}

SubbandStack SubbandStack::operator+(const SubbandStack &o) const {
  validate();
  o.validate();
  if (ll.sizes() != o.ll.sizes()) {
    throw ShapeError("cannot add subband stacks of different shapes");
  }
  return {ll + o.ll, lh + o.lh, hl + o.hl, hh + o.hh};
}

torch::Tensor SubbandStack::pack() const {
  validate();
  if (ll.dim() != 4) {
    throw ShapeError("pack expects (N, C, h, w) bands");
  }
  return torch::cat({ll, lh, hl, hh}, 1);
}

SubbandStack SubbandStack::unpack(const torch::Tensor &packed) {
  if (packed.dim() != 4 || packed.size(1) % 4 != 0) {
    throw ShapeError("unpack expects (N, 4C, h, w)");
  }
  auto parts = packed.chunk(4, 1);
  return {parts[0], parts[1], parts[2], parts[3]};
}

SubbandStack dwt2(const torch::Tensor &image) {
  if (image.dim() < 2) {
    throw ShapeError("dwt2 needs at least a 2-D input");
  }
  const auto h = image.size(-2);
  const auto w = image.size(-1);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("dwt2 requires even height and width, got " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const auto a = image.index({Ellipsis, Slice(0, None, 2), Slice(0, None, 2)});
  const auto b = image.index({Ellipsis, Slice(0, None, 2), Slice(1, None, 2)});
  const auto c = image.index({Ellipsis, Slice(1, None, 2), Slice(0, None, 2)});
  const auto d = image.index({Ellipsis, Slice(1, None, 2), Slice(1, None, 2)});
  const auto s_ab = a + b;
  const auto s_cd = c + d;
  const auto d_ab = a - b;
  const auto d_cd = c - d;
  return {(s_ab + s_cd) * 0.5, (s_ab - s_cd) * 0.5, (d_ab + d_cd) * 0.5, (d_ab - d_cd) * 0.5};
}

torch::Tensor iwt2(const SubbandStack &bands) {
  bands.validate();
  const auto &ll = bands.ll;
  const auto &lh = bands.lh;
  const auto &hl = bands.hl;
  const auto &hh = bands.hh;
  const auto a = (ll + lh + hl + hh) * 0.5;
  const auto b = (ll + lh - hl - hh) * 0.5;
  const auto c = (ll - lh + hl - hh) * 0.5;
  const auto d = (ll - lh - hl + hh) * 0.5;

  // Interleave: rows alternate (a,b) / (c,d), columns alternate within each row pair.
  auto top = torch::stack({a, b}, -1);    // (..., h, w, 2)
  auto bottom = torch::stack({c, d}, -1); // (..., h, w, 2)
  auto blocks = torch::stack({top, bottom}, -3); // (..., h, 2, w, 2)
  auto sizes = ll.sizes().vec();
  sizes[sizes.size() - 2] *= 2;
  sizes[sizes.size() - 1] *= 2;
  return blocks.reshape(sizes);
}

torch::Tensor bilinear_up2(const torch::Tensor &x) {
  if (x.dim() < 2) {
    throw ShapeError("bilinear_up2 needs at least a 2-D input");
  }
  auto sizes = x.sizes().vec();
  const auto h = sizes[sizes.size() - 2];
  const auto w = sizes[sizes.size() - 1];
  auto flat = x.reshape({-1, 1, h, w});
  auto up = F::interpolate(flat, F::InterpolateFuncOptions()
                                     .size(std::vector<int64_t>{2 * h, 2 * w})
                                     .mode(torch::kBilinear)
                                     .align_corners(false));
  sizes[sizes.size() - 2] = 2 * h;
  sizes[sizes.size() - 1] = 2 * w;
  return up.reshape(sizes);
}

SubbandStack wavelet_upsample(const SubbandStack &bands) {
  return dwt2(bilinear_up2(iwt2(bands)));
}

} // namespace octgan::wavelet
