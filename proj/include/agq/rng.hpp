#pragma once

#include <cstdint>
#include <random>

namespace agq {

// splitmix64; used to derive independent sub-stream seeds from a root seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic seed for (root, stream, index). Trials seeded this way give
// results independent of evaluation order.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream,
                                 std::uint64_t index = 0) {
  return mix_seed(mix_seed(root ^ (stream * 0xd1342543de82ef95ULL)) + index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::uint64_t stream,
                    std::uint64_t index = 0) {
  return Rng(derive_seed(root, stream, index));
}

}  // namespace agq
