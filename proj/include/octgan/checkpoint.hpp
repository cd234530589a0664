#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace octgan::checkpoint {

inline constexpr char kMagic[8] = {'O', 'C', 'T', 'G', 'A', 'N', 'C', 'K'};
inline constexpr uint32_t kFormatVersion = 1;

struct Manifest {
  uint32_t format_version = kFormatVersion;
  /// One of "gan", "sr", "embedder".
  std::string model_kind = "gan";
  int64_t iteration = 0;
  nlohmann::json config = nlohmann::json::object();
  std::string config_hash;
  nlohmann::json metric_history = nlohmann::json::array();
  /// Free-form metadata (dataset statistics, w_mean provenance, ...).
  nlohmann::json extra = nlohmann::json::object();
};

/// Manifest plus uniquely named float32 tensors, kept in insertion order.
class Checkpoint {
public:
  Manifest manifest;

  void add(const std::string &name, const torch::Tensor &tensor);
  bool contains(const std::string &name) const;
  const torch::Tensor &get(const std::string &name) const;
  const std::vector<std::pair<std::string, torch::Tensor>> &tensors() const { return tensors_; }

  /// Stores every parameter and buffer of `module` under `prefix`.
  void add_module(const std::string &prefix, const torch::nn::Module &module);
  /// Copies tensors stored under `prefix` into `module`; every parameter must be present.
  void load_module(const std::string &prefix, torch::nn::Module &module) const;

private:
  std::vector<std::pair<std::string, torch::Tensor>> tensors_;
};

/// Layout: magic(8) | u32 version | u64 manifest length | manifest JSON | tensor blobs.
/// Tensor data is float32 little-endian; the manifest records the SHA-256 of the blob region.
std::vector<uint8_t> serialize(const Checkpoint &ckpt);
Checkpoint deserialize(std::span<const uint8_t> bytes);

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::filesystem::path &path);

std::string sha256_hex(std::span<const uint8_t> bytes);
std::string config_hash(const nlohmann::json &config);

} // namespace octgan::checkpoint
