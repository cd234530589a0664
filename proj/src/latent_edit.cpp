#include "octgan/latent_edit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "octgan/errors.hpp"

namespace octgan::latent {

void LayerRange::validate(int64_t num_layers) const {
  if (empty()) {
    throw ParameterError("layer range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                         ") is empty");
  }
  if (lo < 0 || hi > num_layers) {
    throw ParameterError("layer range [" + std::to_string(lo) + ", " + std::to_string(hi) +
                         ") exceeds the " + std::to_string(num_layers) + " style inputs");
  }
}

nlohmann::json LatentDirection::to_json() const {
  return {{"rank", rank},
          {"eigenvalue", eigenvalue},
          {"layer_range", {layer_range.lo, layer_range.hi}},
          {"vector", vector}};
}

LatentDirection LatentDirection::from_json(const nlohmann::json &j) {
  LatentDirection d;
  d.rank = j.at("rank").get<int64_t>();
  d.eigenvalue = j.at("eigenvalue").get<double>();
  const auto range = j.at("layer_range").get<std::vector<int64_t>>();
  if (range.size() != 2) {
    throw FormatError("layer_range must be [lo, hi]");
  }
  d.layer_range = {range[0], range[1]};
  d.vector = j.at("vector").get<std::vector<double>>();
  return d;
}

std::vector<LatentDirection> factorize(const std::vector<torch::Tensor> &matrices,
                                       const LayerRange &range) {
  range.validate(static_cast<int64_t>(matrices.size()));
  const int64_t d = matrices[static_cast<size_t>(range.lo)].size(1);
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
  for (int64_t l = range.lo; l < range.hi; ++l) {
    const auto &m = matrices[static_cast<size_t>(l)];
    if (m.dim() != 2 || m.size(1) != d) {
      throw ShapeError("style matrices must all be (in_channels x D)");
    }
    const auto a = m.detach().to(torch::kFloat64).contiguous();
    const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>
        view(a.data_ptr<double>(), a.size(0), a.size(1));
    gram.noalias() += view.transpose() * view;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) {
    throw NumericError("eigendecomposition of the style Gram matrix failed");
  }
  std::vector<LatentDirection> out;
  out.reserve(static_cast<size_t>(d));
  for (int64_t k = 0; k < d; ++k) {
    // Eigen sorts ascending.
    const Eigen::Index col = d - 1 - k;
    Eigen::VectorXd v = eig.eigenvectors().col(col).normalized();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (std::abs(v(i)) > 1e-12) {
        if (v(i) < 0.0) {
          v = -v;
        }
        break;
      }
    }
    LatentDirection dir;
    dir.vector.assign(v.data(), v.data() + v.size());
    dir.eigenvalue = std::max(0.0, eig.eigenvalues()(col));
    dir.rank = k;
    dir.layer_range = range;
    out.push_back(std::move(dir));
  }
  return out;
}

std::vector<LatentDirection> factorize(const gan::Generator &generator, const LayerRange &range) {
  return factorize(generator->style_matrices(), range);
}

LayerRange full_range(const gan::Generator &generator) {
  return {0, generator->config().num_ws()};
}

torch::Tensor apply_edit(const torch::Tensor &ws, const LatentDirection &direction, double alpha) {
  if (ws.dim() != 3) {
    throw ShapeError("apply_edit expects ws shaped (N, L, D)");
  }
  if (static_cast<int64_t>(direction.vector.size()) != ws.size(2)) {
    throw ShapeError("direction has dimension " + std::to_string(direction.vector.size()) +
                     " but the latent has " + std::to_string(ws.size(2)));
  }
  direction.layer_range.validate(ws.size(1));
  if (alpha == 0.0) {
    return ws.clone();
  }
  auto v = torch::tensor(direction.vector, torch::kFloat64).to(ws.dtype());
  auto out = ws.clone();
  using torch::indexing::Slice;
  auto band = out.index({Slice(), Slice(direction.layer_range.lo, direction.layer_range.hi)});
  band.add_(v.mul(alpha));
  return out;
}

Raster hstack(const std::vector<Raster> &frames) {
  if (frames.empty()) {
    throw ParameterError("cannot stack an empty frame list");
  }
  const auto rows = frames.front().rows();
  int64_t cols = 0;
  for (const auto &f : frames) {
    if (f.rows() != rows) {
      throw ShapeError("frames must share a height");
    }
    cols += f.cols();
  }
  Raster strip(rows, cols);
  int64_t offset = 0;
  for (const auto &f : frames) {
    for (int64_t r = 0; r < rows; ++r) {
      std::copy_n(f.data().begin() + r * f.cols(), f.cols(),
                  strip.data().begin() + r * cols + offset);
    }
    offset += f.cols();
  }
  return strip;
}

EditGrid edit_grid(GanModel &model, uint64_t seed, const LatentDirection &direction,
                   const std::vector<double> &alphas, double psi) {
  if (alphas.empty()) {
    throw ParameterError("edit_grid needs at least one alpha");
  }
  if (!std::is_sorted(alphas.begin(), alphas.end())) {
    throw ParameterError("edit_grid alphas must be sorted ascending");
  }
  const auto ws = latent_for_seed(model, seed, psi);
  EditGrid grid;
  for (double a : alphas) {
    grid.frames.push_back(render_ws(model, apply_edit(ws, direction, a), seed));
  }
  grid.strip = hstack(grid.frames);
  return grid;
}

} // namespace octgan::latent
