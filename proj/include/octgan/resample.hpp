#pragma once

#include <string>
#include <vector>

#include "octgan/image.hpp"

namespace octgan::resample {

enum class Kernel { nearest, bilinear, bicubic, lanczos };

Kernel kernel_from_string(const std::string &name);
std::string to_string(Kernel k);

struct KernelSpec {
  Kernel kind = Kernel::bicubic;
  /// Cubic convolution parameter. -0.5 is Catmull-Rom; -0.75 matches OpenCV's INTER_CUBIC.
  double cubic_a = -0.5;
  /// Lanczos lobes.
  int lanczos_a = 3;
  /// Stretch the kernel by the scale factor when shrinking (area-aware downsampling).
  bool antialias = false;
};

/// Kernel weight at offset x (in source-pixel units).
double kernel_weight(const KernelSpec &spec, double x);
double kernel_support(const KernelSpec &spec);

/// One output sample: the first source index and its normalized weights.
struct Tap {
  int64_t first = 0;
  std::vector<double> weights;
};

/// Weight table for one axis, half-pixel centers, replicated borders folded into the taps.
std::vector<Tap> axis_taps(int64_t in_size, int64_t out_size, const KernelSpec &spec);

/// Separable resize of a raster to (out_rows, out_cols).
Raster resize(const Raster &src, int64_t out_rows, int64_t out_cols, const KernelSpec &spec);

} // namespace octgan::resample
