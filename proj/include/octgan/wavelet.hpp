#pragma once

#include <torch/torch.h>

namespace octgan::wavelet {

/// Four Haar subbands of one decomposition level, each (..., H/2, W/2).
struct SubbandStack {
  torch::Tensor ll;
  torch::Tensor lh;
  torch::Tensor hl;
  torch::Tensor hh;

  /// Throws ShapeError unless all four bands share a shape.
  void validate() const;

  SubbandStack operator+(const SubbandStack &o) const;
  /// Concatenates along dim 1 as [ll | lh | hl | hh]; expects (N, C, h, w) bands.
  torch::Tensor pack() const;
  /// Inverse of pack: splits (N, 4C, h, w) into four (N, C, h, w) bands.
  static SubbandStack unpack(const torch::Tensor &packed);
};

/// Orthonormal 2-D Haar analysis over the last two dims. For each 2x2 block [a b; c d]:
/// ll=(a+b+c+d)/2, lh=(a+b-c-d)/2, hl=(a-b+c-d)/2, hh=(a-b-c+d)/2.
SubbandStack dwt2(const torch::Tensor &image);

/// Exact inverse of dwt2.
torch::Tensor iwt2(const SubbandStack &bands);

/// Skip-path upsampling in the coefficient domain: iwt2, bilinear 2x, dwt2.
SubbandStack wavelet_upsample(const SubbandStack &bands);

/// Bilinear 2x with half-pixel centers and replicated borders over the last two dims.
torch::Tensor bilinear_up2(const torch::Tensor &x);

} // namespace octgan::wavelet
