#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include <unistd.h>

#include <torch/torch.h>

#include "octgan/image.hpp"

namespace testutil {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("octgan_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline octgan::Raster random_raster(int64_t rows, int64_t cols, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  octgan::Raster r(rows, cols);
  for (auto &v : r.data()) {
    v = u(rng);
  }
  return r;
}

/// Largest relative error between the autograd gradient of `f` at `x` and central finite
/// differences, evaluated in double precision. Relative to max(1, |grad|_inf).
inline double gradient_check(const std::function<torch::Tensor(const torch::Tensor &)> &f,
                             const torch::Tensor &x0, double h = 1e-6) {
  auto x = x0.to(torch::kFloat64).detach().clone().requires_grad_(true);
  const auto y = f(x);
  const auto analytic = torch::autograd::grad({y}, {x})[0].detach().flatten();
  auto flat = x.detach().clone().flatten();
  double worst = 0.0;
  const double scale = std::max(1.0, analytic.abs().max().item<double>());
  for (int64_t i = 0; i < flat.numel(); ++i) {
    auto plus = flat.clone();
    auto minus = flat.clone();
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(plus.view(x0.sizes())).item<double>();
    const double fm = f(minus.view(x0.sizes())).item<double>();
    const double numeric = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(numeric - analytic[i].item<double>()) / scale);
  }
  return worst;
}

// Direct 4x4 cubic convolution, written independently of the separable tap tables.
inline double keys(double x, double a) {
  x = std::abs(x);
  if (x < 1.0) return (a + 2) * x * x * x - (a + 3) * x * x + 1;
  if (x < 2.0) return a * x * x * x - 5 * a * x * x + 8 * a * x - 4 * a;
  return 0.0;
}

inline octgan::Raster reference_bicubic(const octgan::Raster &src, int64_t out_rows, int64_t out_cols, double a) {
  octgan::Raster out(out_rows, out_cols);
  const double sy = static_cast<double>(src.rows()) / out_rows;
  const double sx = static_cast<double>(src.cols()) / out_cols;
  for (int64_t r = 0; r < out_rows; ++r) {
    for (int64_t c = 0; c < out_cols; ++c) {
      const double y = (r + 0.5) * sy - 0.5;
      const double x = (c + 0.5) * sx - 0.5;
      const auto y0 = static_cast<int64_t>(std::floor(y));
      const auto x0 = static_cast<int64_t>(std::floor(x));
      double acc = 0.0;
      double norm = 0.0;
      for (int64_t j = y0 - 1; j <= y0 + 2; ++j) {
        for (int64_t i = x0 - 1; i <= x0 + 2; ++i) {
          const double w = keys(y - j, a) * keys(x - i, a);
          const auto jj = std::clamp<int64_t>(j, 0, src.rows() - 1);
          const auto ii = std::clamp<int64_t>(i, 0, src.cols() - 1);
          acc += w * src.at(jj, ii);
          norm += w;
        }
      }
      out.at(r, c) = static_cast<float>(acc / norm);
    }
  }
  return out;
}

inline double max_abs_diff(const octgan::Raster &a, const octgan::Raster &b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    return std::numeric_limits<double>::infinity();
  }
  double m = 0.0;
  for (size_t i = 0; i < a.data().size(); ++i) {
    m = std::max(m, static_cast<double>(std::abs(a.data()[i] - b.data()[i])));
  }
  return m;
}

} // namespace testutil
