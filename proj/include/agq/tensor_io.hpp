#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "agq/quantize.hpp"

namespace agq {

// Binary dump of a QuantizedTensor, little-endian:
//   magic "AGQT", version u16, codec_kind u8, bit_width u8, block_size u32,
//   ndim u8, dims u64 x ndim, scales f32 x n_blocks, codes packed LSB-first
//   at bit_width bits per element, zero-padded to a byte boundary.
inline constexpr char kDumpMagic[4] = {'A', 'G', 'Q', 'T'};
inline constexpr std::uint16_t kDumpVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
  unsigned char buf[sizeof(T)];
  std::uint64_t u = 0;
  std::memcpy(&u, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw std::runtime_error("tensor dump: truncated input");
  std::uint64_t u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    u |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  T v;
  std::memcpy(&v, &u, sizeof(T));
  return v;
}

inline void write_le_f32(std::ostream& os, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  write_le<std::uint32_t>(os, u);
}

inline float read_le_f32(std::istream& is) {
  const std::uint32_t u = read_le<std::uint32_t>(is);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace detail

inline std::vector<std::uint8_t> pack_codes(
    const std::vector<std::uint8_t>& codes, int bit_width) {
  std::vector<std::uint8_t> out;
  out.reserve((codes.size() * bit_width + 7) / 8);
  std::uint32_t acc = 0;
  int nbits = 0;
  for (std::uint8_t c : codes) {
    acc |= static_cast<std::uint32_t>(c & ((1u << bit_width) - 1)) << nbits;
    nbits += bit_width;
    while (nbits >= 8) {
      out.push_back(static_cast<std::uint8_t>(acc & 0xff));
      acc >>= 8;
      nbits -= 8;
    }
  }
  if (nbits > 0) out.push_back(static_cast<std::uint8_t>(acc & 0xff));
  return out;
}

inline std::vector<std::uint8_t> unpack_codes(
    const std::vector<std::uint8_t>& bytes, int bit_width, std::size_t count) {
  std::vector<std::uint8_t> out(count);
  std::uint32_t acc = 0;
  int nbits = 0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < count; ++i) {
    while (nbits < bit_width) {
      if (pos >= bytes.size())
        throw std::runtime_error("tensor dump: packed codes truncated");
      acc |= static_cast<std::uint32_t>(bytes[pos++]) << nbits;
      nbits += 8;
    }
    out[i] = static_cast<std::uint8_t>(acc & ((1u << bit_width) - 1));
    acc >>= bit_width;
    nbits -= bit_width;
  }
  return out;
}

inline void dump_tensor(const QuantizedTensor& q, std::ostream& os) {
  validate(q);
  os.write(kDumpMagic, 4);
  detail::write_le<std::uint16_t>(os, kDumpVersion);
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(q.codec_kind));
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(q.bit_width));
  detail::write_le<std::uint32_t>(os, q.block_size);
  detail::write_le<std::uint8_t>(os, static_cast<std::uint8_t>(q.shape.size()));
  for (auto d : q.shape) detail::write_le<std::uint64_t>(os, d);
  for (float s : q.scales) detail::write_le_f32(os, s);
  const auto packed = pack_codes(q.codes, q.bit_width);
  os.write(reinterpret_cast<const char*>(packed.data()),
           static_cast<std::streamsize>(packed.size()));
  if (!os) throw std::runtime_error("tensor dump: write failed");
}

inline QuantizedTensor load_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kDumpMagic, 4) != 0)
    throw std::runtime_error("tensor dump: bad magic");
  const auto version = detail::read_le<std::uint16_t>(is);
  if (version != kDumpVersion)
    throw std::runtime_error("tensor dump: unsupported version " +
                             std::to_string(version));
  QuantizedTensor q;
  const auto codec = detail::read_le<std::uint8_t>(is);
  if (codec > 2) throw std::runtime_error("tensor dump: unknown codec kind");
  q.codec_kind = static_cast<CodecKind>(codec);
  q.bit_width = detail::read_le<std::uint8_t>(is);
  q.block_size = detail::read_le<std::uint32_t>(is);
  const auto ndim = detail::read_le<std::uint8_t>(is);
  q.shape.resize(ndim);
  for (auto& d : q.shape) d = detail::read_le<std::uint64_t>(is);
  const std::size_t n = shape_elements(q.shape);
  detail::check_codec_args(q.bit_width, q.block_size, q.codec_kind);
  const std::size_t n_blocks = (n + q.block_size - 1) / q.block_size;
  q.scales.resize(n_blocks);
  for (auto& s : q.scales) s = detail::read_le_f32(is);
  const std::size_t packed_size = (n * q.bit_width + 7) / 8;
  std::vector<std::uint8_t> packed(packed_size);
  is.read(reinterpret_cast<char*>(packed.data()),
          static_cast<std::streamsize>(packed_size));
  if (!is) throw std::runtime_error("tensor dump: truncated codes");
  q.codes = unpack_codes(packed, q.bit_width, n);
  validate(q);
  return q;
}

inline void dump_tensor_file(const QuantizedTensor& q, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  dump_tensor(q, os);
}

inline QuantizedTensor load_tensor_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for read: " + path);
  return load_tensor(is);
}

}  // namespace agq
