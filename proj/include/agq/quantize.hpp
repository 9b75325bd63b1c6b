#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "agq/fp8.hpp"

namespace agq {

enum class CodecKind : std::uint8_t {
  SymmetricLinear = 0,
  Fp4E2M1 = 1,
  Fp8E4M3 = 2,
};

inline const char* codec_name(CodecKind k) {
  switch (k) {
    case CodecKind::SymmetricLinear: return "symmetric_linear";
    case CodecKind::Fp4E2M1: return "fp4_e2m1";
    case CodecKind::Fp8E4M3: return "fp8_e4m3";
  }
  return "?";
}

// Block-wise quantized tensor. Codes are kept one byte per element; the
// serialized form packs them at bit_width bits (see tensor_io.hpp).
//
// Each block of block_size consecutive elements carries one scale, the
// block's absolute maximum. Dequantization maps the top code of the format
// to exactly +-scale:
//   SymmetricLinear: value = (code - L) / L * scale,  L = 2^(b-1) - 1
//   Fp4E2M1:         value = e2m1(code) / 6   * scale
//   Fp8E4M3:         value = e4m3(code) / 448 * scale
// A scale of zero marks an all-zero block.
struct QuantizedTensor {
  std::vector<std::uint8_t> codes;
  std::vector<float> scales;
  int bit_width = 0;
  std::uint32_t block_size = 128;
  std::vector<std::uint64_t> shape;
  CodecKind codec_kind = CodecKind::SymmetricLinear;

  std::size_t num_elements() const { return codes.size(); }
  std::size_t num_blocks() const { return scales.size(); }
};

constexpr std::uint32_t kDefaultBlockSize = 128;

inline std::size_t shape_elements(const std::vector<std::uint64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

namespace detail {

inline int symmetric_levels(int bit_width) { return (1 << (bit_width - 1)) - 1; }

inline void check_codec_args(int bit_width, std::uint32_t block_size,
                             CodecKind kind) {
  if (bit_width < 4 || bit_width > 8)
    throw std::invalid_argument("bit_width must be in [4, 8], got " +
                                std::to_string(bit_width));
  if (block_size == 0) throw std::invalid_argument("block_size must be >= 1");
  if (kind == CodecKind::Fp8E4M3 && bit_width != 8)
    throw std::invalid_argument("fp8_e4m3 requires bit_width 8");
  if (kind == CodecKind::Fp4E2M1 && bit_width != 4)
    throw std::invalid_argument("fp4_e2m1 requires bit_width 4");
}

}  // namespace detail

inline QuantizedTensor quantize_blockwise(
    std::span<const float> x, int bit_width,
    std::uint32_t block_size = kDefaultBlockSize,
    CodecKind kind = CodecKind::SymmetricLinear,
    std::vector<std::uint64_t> shape = {}) {
  detail::check_codec_args(bit_width, block_size, kind);
  if (shape.empty()) shape = {static_cast<std::uint64_t>(x.size())};
  if (shape_elements(shape) != x.size())
    throw std::invalid_argument("shape does not match element count");

  const std::size_t n = x.size();
  const std::size_t n_blocks = (n + block_size - 1) / block_size;
  QuantizedTensor q;
  q.bit_width = bit_width;
  q.block_size = block_size;
  q.codec_kind = kind;
  q.shape = std::move(shape);
  q.codes.resize(n);
  q.scales.resize(n_blocks);

  const int levels = detail::symmetric_levels(bit_width);
  const std::uint8_t zero_code =
      kind == CodecKind::SymmetricLinear ? static_cast<std::uint8_t>(levels)
                                         : 0;

  for (std::size_t b = 0; b < n_blocks; ++b) {
    const std::size_t begin = b * block_size;
    const std::size_t end = std::min(n, begin + block_size);
    float absmax = 0.0f;
    for (std::size_t i = begin; i < end; ++i) {
      if (!std::isfinite(x[i]))
        throw std::invalid_argument("non-finite input element in block " +
                                    std::to_string(b));
      absmax = std::max(absmax, std::fabs(x[i]));
    }
    q.scales[b] = absmax;
    if (absmax == 0.0f) {
      for (std::size_t i = begin; i < end; ++i) q.codes[i] = zero_code;
      continue;
    }
    for (std::size_t i = begin; i < end; ++i) {
      // |t| <= 1 exactly: rounding is monotone and 1.0 is representable.
      const double t = static_cast<double>(x[i]) / absmax;
      switch (kind) {
        case CodecKind::SymmetricLinear: {
          int k = static_cast<int>(std::nearbyint(t * levels));
          k = std::max(-levels, std::min(levels, k));
          q.codes[i] = static_cast<std::uint8_t>(k + levels);
          break;
        }
        case CodecKind::Fp4E2M1:
          q.codes[i] = fp4_encode(t * fp4::kMaxFinite);
          break;
        case CodecKind::Fp8E4M3:
          q.codes[i] = fp8_encode(t * fp8::kMaxFinite).value.byte;
          break;
      }
    }
  }
  return q;
}

// Dequantized value of one code under the given codec, as a multiple of the
// block scale. The top-of-format code maps to exactly 1.
inline double code_unit_value(CodecKind kind, int bit_width,
                              std::uint8_t code) {
  switch (kind) {
    case CodecKind::SymmetricLinear: {
      const int levels = detail::symmetric_levels(bit_width);
      return static_cast<double>(static_cast<int>(code) - levels) / levels;
    }
    case CodecKind::Fp4E2M1:
      return fp4_decode(code) / fp4::kMaxFinite;
    case CodecKind::Fp8E4M3:
      return fp8_decode(Fp8Value{code}) / fp8::kMaxFinite;
  }
  return 0.0;
}

inline void validate(const QuantizedTensor& q) {
  detail::check_codec_args(q.bit_width, q.block_size, q.codec_kind);
  const std::size_t n = q.num_elements();
  if (shape_elements(q.shape) != n)
    throw std::invalid_argument("quantized tensor: shape/code count mismatch");
  const std::size_t expect_blocks = (n + q.block_size - 1) / q.block_size;
  if (q.scales.size() != expect_blocks)
    throw std::invalid_argument("quantized tensor: wrong number of scales");
  const std::uint32_t code_limit = 1u << q.bit_width;
  for (std::size_t i = 0; i < n; ++i)
    if (q.codes[i] >= code_limit)
      throw std::invalid_argument("quantized tensor: code out of range at " +
                                  std::to_string(i));
  for (std::size_t b = 0; b < q.scales.size(); ++b) {
    const float s = q.scales[b];
    if (!(s >= 0.0f) || !std::isfinite(s))
      throw std::invalid_argument("quantized tensor: bad scale at block " +
                                  std::to_string(b));
  }
}

inline std::vector<float> dequantize_blockwise(const QuantizedTensor& q) {
  validate(q);
  const std::size_t n = q.num_elements();
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t b = i / q.block_size;
    const double scale = q.scales[b];
    out[i] = static_cast<float>(
        code_unit_value(q.codec_kind, q.bit_width, q.codes[i]) * scale);
  }
  return out;
}

// Per-element relative roundtrip error delta with x_hat = x * (1 + delta);
// zero elements roundtrip to zero and get delta = 0.
inline std::vector<double> roundtrip_relative_delta(
    std::span<const float> x, int bit_width,
    std::uint32_t block_size = kDefaultBlockSize,
    CodecKind kind = CodecKind::SymmetricLinear) {
  const QuantizedTensor q = quantize_blockwise(x, bit_width, block_size, kind);
  const std::vector<float> back = dequantize_blockwise(q);
  std::vector<double> delta(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    delta[i] = x[i] == 0.0f
                   ? 0.0
                   : (static_cast<double>(back[i]) - x[i]) /
                         static_cast<double>(x[i]);
  return delta;
}

}  // namespace agq
