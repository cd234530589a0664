#include "octgan/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "octgan/errors.hpp"

namespace octgan {

Raster::Raster(int64_t rows, int64_t cols, float fill)
    : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows * cols), fill) {
  if (rows < 0 || cols < 0) {
    throw ShapeError("raster dimensions must be non-negative");
  }
}

Raster::Raster(int64_t rows, int64_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (rows < 0 || cols < 0 || static_cast<int64_t>(data_.size()) != rows * cols) {
    throw ShapeError("raster data size does not match " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  }
}

double Raster::mean() const {
  if (data_.empty()) {
    return 0.0;
  }
  double acc = 0.0;
  for (float v : data_) {
    acc += v;
  }
  return acc / static_cast<double>(data_.size());
}

void Raster::clamp(float lo, float hi) {
  for (float &v : data_) {
    v = std::clamp(v, lo, hi);
  }
}

torch::Tensor Raster::to_tensor() const {
  return torch::from_blob(const_cast<float *>(data_.data()), {rows_, cols_}, torch::kFloat32)
      .clone();
}

Raster Raster::from_tensor(const torch::Tensor &t) {
  auto flat = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  if (flat.dim() != 2) {
    flat = flat.squeeze();
  }
  if (flat.dim() != 2) {
    throw ShapeError("expected a 2-D tensor for raster conversion");
  }
  const auto *p = flat.data_ptr<float>();
  std::vector<float> data(p, p + flat.numel());
  return Raster(flat.size(0), flat.size(1), std::move(data));
}

std::ostream &operator<<(std::ostream &os, const Raster &r) {
  return os << "Raster(" << r.rows() << "x" << r.cols() << ", mean=" << r.mean() << ")";
}

std::string to_string(WidthClass w) {
  return w == WidthClass::wide16mm ? "wide16mm" : "narrow10mm";
}

std::string to_string(Provenance p) {
  switch (p) {
  case Provenance::real:
    return "real";
  case Provenance::phantom:
    return "phantom";
  case Provenance::generated:
    return "generated";
  case Provenance::upscaled:
    return "upscaled";
  }
  return "phantom";
}

WidthClass width_class_from_string(const std::string &s) {
  if (s == "wide16mm") {
    return WidthClass::wide16mm;
  }
  if (s == "narrow10mm") {
    return WidthClass::narrow10mm;
  }
  throw ParameterError("unknown width class: " + s);
}

Provenance provenance_from_string(const std::string &s) {
  if (s == "real") {
    return Provenance::real;
  }
  if (s == "phantom") {
    return Provenance::phantom;
  }
  if (s == "generated") {
    return Provenance::generated;
  }
  if (s == "upscaled") {
    return Provenance::upscaled;
  }
  throw ParameterError("unknown provenance: " + s);
}

std::vector<std::string> ConditionFlags::names() const {
  std::vector<std::string> out;
  if (icl) out.emplace_back("icl");
  if (ring_segments) out.emplace_back("ring_segments");
  if (eyelid) out.emplace_back("eyelid");
  if (flare) out.emplace_back("flare");
  if (haze) out.emplace_back("haze");
  return out;
}

ConditionFlags ConditionFlags::from_names(const std::vector<std::string> &names) {
  ConditionFlags f;
  for (const auto &n : names) {
    if (n == "icl") {
      f.icl = true;
    } else if (n == "ring_segments") {
      f.ring_segments = true;
    } else if (n == "eyelid") {
      f.eyelid = true;
    } else if (n == "flare") {
      f.flare = true;
    } else if (n == "haze") {
      f.haze = true;
    } else {
      throw ParameterError("unknown condition flag: " + n);
    }
  }
  return f;
}

void BScanImage::validate() const {
  if (pixels.rows() != pixels.cols() || pixels.empty()) {
    throw ShapeError("stored B-scans must be square and non-empty");
  }
  for (float v : pixels.data()) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw NumericError("B-scan pixel outside [0,1]");
    }
  }
}

torch::Tensor stack_rasters(const std::vector<Raster> &rasters) {
  if (rasters.empty()) {
    throw ShapeError("cannot stack an empty raster list");
  }
  const int64_t h = rasters.front().rows();
  const int64_t w = rasters.front().cols();
  auto out = torch::empty({static_cast<int64_t>(rasters.size()), 1, h, w}, torch::kFloat32);
  float *dst = out.data_ptr<float>();
  for (const auto &r : rasters) {
    if (r.rows() != h || r.cols() != w) {
      throw ShapeError("raster batch has mixed resolutions");
    }
    dst = std::copy(r.data().begin(), r.data().end(), dst);
  }
  return out;
}

std::vector<Raster> unstack_rasters(const torch::Tensor &batch) {
  if (batch.dim() != 4 || batch.size(1) != 1) {
    throw ShapeError("expected an (N,1,H,W) batch");
  }
  std::vector<Raster> out;
  out.reserve(static_cast<size_t>(batch.size(0)));
  for (int64_t i = 0; i < batch.size(0); ++i) {
    out.push_back(Raster::from_tensor(batch[i][0]));
  }
  return out;
}

} // namespace octgan
