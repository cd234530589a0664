#pragma once

#include <cstdint>

namespace octgan {

/// SplitMix64 finalizer; used to derive independent sub-seeds from (seed, stream, index).
constexpr uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr uint64_t derive_seed(uint64_t seed, uint64_t stream, uint64_t index = 0) {
  return mix64(mix64(mix64(seed) ^ stream) ^ index);
}

} // namespace octgan
