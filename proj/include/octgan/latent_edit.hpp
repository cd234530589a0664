#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "octgan/gan.hpp"
#include "octgan/image.hpp"
#include "octgan/model.hpp"

namespace octgan::latent {

/// Half-open interval [lo, hi) over the generator's style inputs (the ws axis).
struct LayerRange {
  int64_t lo = 0;
  int64_t hi = 0;

  bool empty() const { return hi <= lo; }
  /// Throws ParameterError when empty or not inside [0, num_layers].
  void validate(int64_t num_layers) const;
  bool operator==(const LayerRange &) const = default;
};

struct LatentDirection {
  std::vector<double> vector;  // unit length, size D
  double eigenvalue = 0.0;
  int64_t rank = 0;
  LayerRange layer_range;

  nlohmann::json to_json() const;
  static LatentDirection from_json(const nlohmann::json &j);
};

/// Eigenvectors of A^T A where A stacks `matrices[l]` (each in_l x D) for l in `range`.
/// Sorted by eigenvalue, largest first; each vector's first nonzero component is positive.
std::vector<LatentDirection> factorize(const std::vector<torch::Tensor> &matrices,
                                       const LayerRange &range);
std::vector<LatentDirection> factorize(const gan::Generator &generator, const LayerRange &range);

/// Full range over every style input of `generator`.
LayerRange full_range(const gan::Generator &generator);

/// ws is (N, L, D); adds alpha * vector to the layers inside the direction's range.
torch::Tensor apply_edit(const torch::Tensor &ws, const LatentDirection &direction, double alpha);

struct EditGrid {
  std::vector<Raster> frames;
  Raster strip;  // frames side by side, left to right in alpha order
};

/// Renders `seed` edited by each alpha with the noise fixed to the seed.
EditGrid edit_grid(GanModel &model, uint64_t seed, const LatentDirection &direction,
                   const std::vector<double> &alphas, double psi = 1.0);

Raster hstack(const std::vector<Raster> &frames);

} // namespace octgan::latent
