#include "octgan/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "octgan/errors.hpp"

namespace octgan::resample {

Kernel kernel_from_string(const std::string &name) {
  if (name == "nearest") return Kernel::nearest;
  if (name == "bilinear") return Kernel::bilinear;
  if (name == "bicubic") return Kernel::bicubic;
  if (name == "lanczos") return Kernel::lanczos;
  throw ParameterError("unknown resampling kind: " + name);
}

std::string to_string(Kernel k) {
  switch (k) {
  case Kernel::nearest:
    return "nearest";
  case Kernel::bilinear:
    return "bilinear";
  case Kernel::bicubic:
    return "bicubic";
  case Kernel::lanczos:
    return "lanczos";
  }
  return "bicubic";
}

namespace {

double sinc(double x) {
  if (x == 0.0) {
    return 1.0;
  }
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

} // namespace

double kernel_support(const KernelSpec &spec) {
  switch (spec.kind) {
  case Kernel::nearest:
    return 0.5;
  case Kernel::bilinear:
    return 1.0;
  case Kernel::bicubic:
    return 2.0;
  case Kernel::lanczos:
    return static_cast<double>(spec.lanczos_a);
  }
  return 2.0;
}

double kernel_weight(const KernelSpec &spec, double x) {
  const double ax = std::abs(x);
  switch (spec.kind) {
  case Kernel::nearest:
    // Half-open box so exactly one tap wins at the boundary.
    return (x >= -0.5 && x < 0.5) ? 1.0 : 0.0;
  case Kernel::bilinear:
    return ax < 1.0 ? 1.0 - ax : 0.0;
  case Kernel::bicubic: {
    const double a = spec.cubic_a;
    if (ax <= 1.0) {
      return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
    }
    if (ax < 2.0) {
      return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
    }
    return 0.0;
  }
  case Kernel::lanczos: {
    const double a = spec.lanczos_a;
    return ax < a ? sinc(x) * sinc(x / a) : 0.0;
  }
  }
  return 0.0;
}

std::vector<Tap> axis_taps(int64_t in_size, int64_t out_size, const KernelSpec &spec) {
  if (in_size <= 0 || out_size <= 0) {
    throw ShapeError("resample sizes must be positive");
  }
  const double scale = static_cast<double>(in_size) / static_cast<double>(out_size);
  std::vector<Tap> taps(static_cast<size_t>(out_size));

  if (spec.kind == Kernel::nearest) {
    for (int64_t i = 0; i < out_size; ++i) {
      const auto src = std::min<int64_t>(
          in_size - 1, static_cast<int64_t>(std::floor((static_cast<double>(i) + 0.5) * scale)));
      taps[static_cast<size_t>(i)] = Tap{src, {1.0}};
    }
    return taps;
  }

  const double stretch = (spec.antialias && scale > 1.0) ? scale : 1.0;
  const double support = kernel_support(spec) * stretch;
  for (int64_t i = 0; i < out_size; ++i) {
    const double center = (static_cast<double>(i) + 0.5) * scale - 0.5;
    const auto lo = static_cast<int64_t>(std::floor(center - support)) + 1;
    const auto hi = static_cast<int64_t>(std::ceil(center + support)) - 1;

    // Accumulate onto clamped indices so replicated borders stay normalized.
    const int64_t first = std::clamp<int64_t>(lo, 0, in_size - 1);
    const int64_t last = std::clamp<int64_t>(hi, 0, in_size - 1);
    std::vector<double> w(static_cast<size_t>(last - first + 1), 0.0);
    double total = 0.0;
    for (int64_t j = lo; j <= hi; ++j) {
      const double k = kernel_weight(spec, (static_cast<double>(j) - center) / stretch);
      const int64_t idx = std::clamp<int64_t>(j, 0, in_size - 1);
      w[static_cast<size_t>(idx - first)] += k;
      total += k;
    }
    if (total == 0.0) {
      throw NumericError("resampling kernel has zero mass");
    }
    for (double &v : w) {
      v /= total;
    }
    taps[static_cast<size_t>(i)] = Tap{first, std::move(w)};
  }
  return taps;
}

Raster resize(const Raster &src, int64_t out_rows, int64_t out_cols, const KernelSpec &spec) {
  if (src.empty()) {
    throw ShapeError("cannot resize an empty raster");
  }
  const auto col_taps = axis_taps(src.cols(), out_cols, spec);
  const auto row_taps = axis_taps(src.rows(), out_rows, spec);

  std::vector<double> horizontal(static_cast<size_t>(src.rows() * out_cols));
  for (int64_t r = 0; r < src.rows(); ++r) {
    for (int64_t c = 0; c < out_cols; ++c) {
      const auto &tap = col_taps[static_cast<size_t>(c)];
      double acc = 0.0;
      for (size_t k = 0; k < tap.weights.size(); ++k) {
        acc += tap.weights[k] * src.at(r, tap.first + static_cast<int64_t>(k));
      }
      horizontal[static_cast<size_t>(r * out_cols + c)] = acc;
    }
  }

  Raster out(out_rows, out_cols);
  for (int64_t r = 0; r < out_rows; ++r) {
    const auto &tap = row_taps[static_cast<size_t>(r)];
    for (int64_t c = 0; c < out_cols; ++c) {
      double acc = 0.0;
      for (size_t k = 0; k < tap.weights.size(); ++k) {
        acc += tap.weights[k] *
               horizontal[static_cast<size_t>((tap.first + static_cast<int64_t>(k)) * out_cols + c)];
      }
      out.at(r, c) = static_cast<float>(acc);
    }
  }
  return out;
}

} // namespace octgan::resample
