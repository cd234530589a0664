#include "octgan/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <openssl/evp.h>

#include "octgan/errors.hpp"
#include "octgan/png_io.hpp"

namespace octgan::checkpoint {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr size_t kHeaderSize = sizeof(kMagic) + sizeof(uint32_t) + sizeof(uint64_t);

template <typename T> void put(std::vector<uint8_t> &out, T v) {
  const auto *p = reinterpret_cast<const uint8_t *>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T> T get_at(std::span<const uint8_t> bytes, size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

} // namespace

std::string sha256_hex(std::span<const uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    const unsigned char c = digest[i];
    out += kHex[c >> 4];
    out += kHex[c & 15];
  }
  return out;
}

std::string config_hash(const nlohmann::json &config) {
  const std::string text = config.dump();
  return sha256_hex({reinterpret_cast<const uint8_t *>(text.data()), text.size()});
}

void Checkpoint::add(const std::string &name, const torch::Tensor &tensor) {
  if (name.empty()) {
    throw ParameterError("tensor name must be non-empty");
  }
  if (contains(name)) {
    throw ParameterError("duplicate tensor name: " + name);
  }
  tensors_.emplace_back(name, tensor.detach().to(torch::kCPU, torch::kFloat32).contiguous().clone());
}

bool Checkpoint::contains(const std::string &name) const {
  for (const auto &[n, t] : tensors_) {
    if (n == name) {
      return true;
    }
  }
  return false;
}

const torch::Tensor &Checkpoint::get(const std::string &name) const {
  for (const auto &[n, t] : tensors_) {
    if (n == name) {
      return t;
    }
  }
  throw NotFoundError("checkpoint has no tensor named " + name);
}

void Checkpoint::add_module(const std::string &prefix, const torch::nn::Module &module) {
  for (const auto &item : module.named_parameters(true)) {
    add(prefix + item.key(), item.value());
  }
  for (const auto &item : module.named_buffers(true)) {
    add(prefix + item.key(), item.value());
  }
}

void Checkpoint::load_module(const std::string &prefix, torch::nn::Module &module) const {
  torch::NoGradGuard guard;
  auto assign = [&](const std::string &key, torch::Tensor &target) {
    const auto &src = get(prefix + key);
    if (src.sizes() != target.sizes()) {
      throw ShapeError("shape mismatch for " + prefix + key);
    }
    target.copy_(src);
  };
  for (auto &item : module.named_parameters(true)) {
    assign(item.key(), item.value());
  }
  for (auto &item : module.named_buffers(true)) {
    assign(item.key(), item.value());
  }
}

std::vector<uint8_t> serialize(const Checkpoint &ckpt) {
  std::vector<uint8_t> blobs;
  nlohmann::json index = nlohmann::json::array();
  for (const auto &[name, tensor] : ckpt.tensors()) {
    const auto nbytes = static_cast<size_t>(tensor.numel()) * sizeof(float);
    index.push_back({{"name", name},
                     {"shape", tensor.sizes().vec()},
                     {"offset", blobs.size()},
                     {"nbytes", nbytes}});
    const auto *p = reinterpret_cast<const uint8_t *>(tensor.data_ptr<float>());
    blobs.insert(blobs.end(), p, p + nbytes);
  }

  const auto &m = ckpt.manifest;
  nlohmann::json manifest = {
      {"format_version", m.format_version},
      {"model_kind", m.model_kind},
      {"iteration", m.iteration},
      {"config", m.config},
      {"config_hash", m.config_hash.empty() ? config_hash(m.config) : m.config_hash},
      {"metric_history", m.metric_history},
      {"extra", m.extra},
      {"tensors", index},
      {"blob_size", blobs.size()},
      {"blob_digest", sha256_hex(blobs)},
  };
  const std::string text = manifest.dump();

  std::vector<uint8_t> out;
  out.reserve(kHeaderSize + text.size() + blobs.size());
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<uint32_t>(out, m.format_version);
  put<uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), blobs.begin(), blobs.end());
  return out;
}

Checkpoint deserialize(std::span<const uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("not an octgan checkpoint (bad magic)");
  }
  if (bytes.size() < kHeaderSize) {
    throw CorruptionError("checkpoint header truncated");
  }
  const auto version = get_at<uint32_t>(bytes, sizeof(kMagic));
  if (version != kFormatVersion) {
    throw FormatError("unsupported checkpoint format version " + std::to_string(version));
  }
  const auto manifest_len = get_at<uint64_t>(bytes, sizeof(kMagic) + sizeof(uint32_t));
  if (manifest_len > bytes.size() - kHeaderSize) {
    throw CorruptionError("checkpoint manifest truncated");
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + kHeaderSize,
                                     bytes.begin() + kHeaderSize + static_cast<long>(manifest_len));
  } catch (const nlohmann::json::exception &e) {
    throw CorruptionError(std::string("checkpoint manifest unreadable: ") + e.what());
  }
  if (manifest.value("format_version", 0u) != kFormatVersion) {
    throw FormatError("manifest format version mismatch");
  }

  const auto blob_begin = kHeaderSize + manifest_len;
  const auto blob_size = manifest.at("blob_size").get<size_t>();
  if (bytes.size() - blob_begin != blob_size) {
    throw CorruptionError("checkpoint blob region has wrong length (truncated file?)");
  }
  const auto blobs = bytes.subspan(blob_begin, blob_size);
  if (sha256_hex(blobs) != manifest.at("blob_digest").get<std::string>()) {
    throw CorruptionError("checkpoint blob digest mismatch");
  }

  Checkpoint ckpt;
  auto &m = ckpt.manifest;
  m.format_version = version;
  m.model_kind = manifest.at("model_kind").get<std::string>();
  m.iteration = manifest.at("iteration").get<int64_t>();
  m.config = manifest.at("config");
  m.config_hash = manifest.at("config_hash").get<std::string>();
  m.metric_history = manifest.at("metric_history");
  m.extra = manifest.value("extra", nlohmann::json::object());

  for (const auto &entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<std::vector<int64_t>>();
    const auto offset = entry.at("offset").get<size_t>();
    const auto nbytes = entry.at("nbytes").get<size_t>();
    int64_t numel = 1;
    for (auto s : shape) {
      numel *= s;
    }
    if (offset + nbytes > blob_size || static_cast<size_t>(numel) * sizeof(float) != nbytes) {
      throw CorruptionError("tensor index entry out of range: " +
                            entry.at("name").get<std::string>());
    }
    auto t = torch::empty(shape, torch::kFloat32);
    std::memcpy(t.data_ptr<float>(), blobs.data() + offset, nbytes);
    ckpt.add(entry.at("name").get<std::string>(), t);
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ckpt) {
  const auto bytes = serialize(ckpt);
  // Write-then-rename so a crash never leaves a half-written checkpoint under the final name.
  auto tmp = path;
  tmp += ".tmp";
  io::write_file(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    throw IoError("cannot move checkpoint into place: " + ec.message());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  return deserialize(io::read_file(path));
}

} // namespace octgan::checkpoint
