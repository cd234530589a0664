#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace octgan {

/// Row-major single-channel float raster.
class Raster {
public:
  Raster() = default;
  Raster(int64_t rows, int64_t cols, float fill = 0.0f);
  Raster(int64_t rows, int64_t cols, std::vector<float> data);

  int64_t rows() const { return rows_; }
  int64_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  float &at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols_ + c)]; }
  float at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * cols_ + c)]; }

  std::vector<float> &data() { return data_; }
  const std::vector<float> &data() const { return data_; }

  double mean() const;
  void clamp(float lo, float hi);

  /// Copies into a (rows, cols) float32 tensor.
  torch::Tensor to_tensor() const;
  static Raster from_tensor(const torch::Tensor &t);

  bool operator==(const Raster &other) const = default;

private:
  int64_t rows_ = 0;
  int64_t cols_ = 0;
  std::vector<float> data_;
};

/// Short diagnostic form: "Raster(HxW, mean=m)".
std::ostream &operator<<(std::ostream &os, const Raster &r);

enum class WidthClass { wide16mm, narrow10mm };
enum class Provenance { real, phantom, generated, upscaled };

std::string to_string(WidthClass w);
std::string to_string(Provenance p);
WidthClass width_class_from_string(const std::string &s);
Provenance provenance_from_string(const std::string &s);

/// Condition flags attached to an image. Each is an independent binary attribute.
struct ConditionFlags {
  bool icl = false;
  bool ring_segments = false;
  bool eyelid = false;
  bool flare = false;
  bool haze = false;

  bool any() const { return icl || ring_segments || eyelid || flare || haze; }
  std::vector<std::string> names() const;
  static ConditionFlags from_names(const std::vector<std::string> &names);
  bool operator==(const ConditionFlags &) const = default;
};

/// A B-scan image. Pixels are in [0,1] and the canvas is square at storage time.
struct BScanImage {
  Raster pixels;
  WidthClass width_class = WidthClass::wide16mm;
  Provenance provenance = Provenance::phantom;
  std::optional<ConditionFlags> label;

  /// Throws ShapeError/NumericError when the stored-image invariants fail.
  void validate() const;
};

/// Stacks rasters into an (N, 1, H, W) float tensor. All rasters must share a shape.
torch::Tensor stack_rasters(const std::vector<Raster> &rasters);
std::vector<Raster> unstack_rasters(const torch::Tensor &batch);

} // namespace octgan
