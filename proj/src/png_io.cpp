#include "octgan/png_io.hpp"

#include <cmath>
#include <fstream>

#include <openssl/evp.h>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "octgan/errors.hpp"

namespace octgan::io {

std::vector<uint8_t> encode_png(const Raster &image) {
  cv::Mat mat(static_cast<int>(image.rows()), static_cast<int>(image.cols()), CV_8UC1);
  for (int64_t r = 0; r < image.rows(); ++r) {
    auto *row = mat.ptr<uint8_t>(static_cast<int>(r));
    for (int64_t c = 0; c < image.cols(); ++c) {
      float v = image.at(r, c);
      v = std::isfinite(v) ? std::min(1.0f, std::max(0.0f, v)) : 0.0f;
      row[c] = static_cast<uint8_t>(std::lround(v * 255.0f));
    }
  }
  std::vector<uint8_t> out;
  if (!cv::imencode(".png", mat, out, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    throw IoError("PNG encoding failed");
  }
  return out;
}

Raster decode_image(std::span<const uint8_t> bytes) {
  if (bytes.empty()) {
    throw IoError("empty image buffer");
  }
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<uint8_t *>(bytes.data()));
  cv::Mat mat = cv::imdecode(buf, cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  if (mat.empty()) {
    throw IoError("undecodable image");
  }
  double scale = 1.0;
  switch (mat.depth()) {
  case CV_8U:
    scale = 1.0 / 255.0;
    break;
  case CV_16U:
    scale = 1.0 / 65535.0;
    break;
  case CV_32F:
  case CV_64F:
    scale = 1.0;
    break;
  default:
    throw IoError("unsupported image bit depth");
  }
  cv::Mat f;
  mat.convertTo(f, CV_32F, scale);
  Raster out(f.rows, f.cols);
  for (int r = 0; r < f.rows; ++r) {
    const float *row = f.ptr<float>(r);
    std::copy(row, row + f.cols, out.data().begin() + static_cast<long>(r) * f.cols);
  }
  out.clamp(0.0f, 1.0f);
  return out;
}

std::vector<uint8_t> read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path &path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw IoError("write failed for " + path.string());
  }
}

void write_png(const std::filesystem::path &path, const Raster &image) {
  write_file(path, encode_png(image));
}

Raster read_image(const std::filesystem::path &path) {
  return decode_image(read_file(path));
}

std::string base64_encode(std::span<const uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char *>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

} // namespace octgan::io
