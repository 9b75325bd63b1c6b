#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "agq/quantize.hpp"
#include "agq/rng.hpp"
#include "agq/tensor_io.hpp"

using namespace agq;

namespace {

std::vector<float> random_floats(std::size_t n, std::uint64_t seed,
                                 float scale = 1.0f) {
  Rng rng(seed);
  std::normal_distribution<float> g(0.0f, scale);
  std::vector<float> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_CASE("all-zero tensor quantizes to zero payload", "[codec]") {
  const std::vector<float> zeros(300, 0.0f);
  for (auto kind : {CodecKind::SymmetricLinear, CodecKind::Fp4E2M1,
                    CodecKind::Fp8E4M3}) {
    const int bits = kind == CodecKind::Fp8E4M3 ? 8
                     : kind == CodecKind::Fp4E2M1 ? 4
                                                  : 5;
    const auto q = quantize_blockwise(zeros, bits, 128, kind);
    for (float s : q.scales) CHECK(s == 0.0f);
    const auto back = dequantize_blockwise(q);
    for (float x : back) CHECK(x == 0.0f);
    for (auto c : q.codes)
      CHECK(code_unit_value(kind, bits, c) == 0.0);
  }
}

TEST_CASE("block absmax element roundtrips exactly", "[codec]") {
  for (auto kind : {CodecKind::SymmetricLinear, CodecKind::Fp4E2M1,
                    CodecKind::Fp8E4M3}) {
    const int bits = kind == CodecKind::Fp8E4M3 ? 8
                     : kind == CodecKind::Fp4E2M1 ? 4
                                                  : 6;
    Rng rng(99);
    std::uniform_real_distribution<float> u(-1.2f, 1.2f);
    std::vector<float> x(256);
    for (auto& v : x) v = u(rng);
    x[37] = 1.25f;    // block 0 absmax
    x[200] = -2.75f;  // block 1 absmax (negative anchor)
    const auto q = quantize_blockwise(x, bits, 128, kind);
    const auto back = dequantize_blockwise(q);
    CHECK(back[37] == 1.25f);
    CHECK(back[200] == -2.75f);
  }
}

TEST_CASE("symmetric linear error bound, exhaustive over blocks", "[codec]") {
  // Per element |x - dq(q(x))| <= scale / (2 (2^(b-1) - 1)), up to one
  // float ulp from the dequantized product.
  const auto x = random_floats(4096, 1234);
  for (int bits = 4; bits <= 8; ++bits) {
    const auto q = quantize_blockwise(x, bits, 128);
    const auto back = dequantize_blockwise(q);
    const int levels = (1 << (bits - 1)) - 1;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double scale = q.scales[i / 128];
      const double limit = scale / (2.0 * levels) + scale * 1.2e-7;
      CHECK(std::fabs(static_cast<double>(back[i]) - x[i]) <= limit);
    }
  }
}

TEST_CASE("quantize-dequantize-quantize is a fixed point", "[codec]") {
  const auto x = random_floats(500, 77);
  for (auto kind : {CodecKind::SymmetricLinear, CodecKind::Fp4E2M1,
                    CodecKind::Fp8E4M3}) {
    const int bits = kind == CodecKind::Fp8E4M3 ? 8
                     : kind == CodecKind::Fp4E2M1 ? 4
                                                  : 7;
    const auto q1 = quantize_blockwise(x, bits, 128, kind);
    const auto back = dequantize_blockwise(q1);
    const auto q2 = quantize_blockwise(back, bits, 128, kind);
    CHECK(q1.codes == q2.codes);
    CHECK(q1.scales == q2.scales);
  }
}

TEST_CASE("fp8 block codec is exact on representable values at full range",
          "[codec]") {
  // One block holding every finite E4M3 magnitude with absmax 448: the
  // stored scale maps the format onto itself, so the roundtrip is bit-exact.
  std::vector<float> vals;
  for (int b = 0; b <= 0x7e; ++b)
    vals.push_back(static_cast<float>(
        fp8_decode(Fp8Value{static_cast<std::uint8_t>(b)})));
  for (int b = 0x81; b <= 0xfe; ++b)
    vals.push_back(static_cast<float>(
        fp8_decode(Fp8Value{static_cast<std::uint8_t>(b)})));
  const auto q =
      quantize_blockwise(vals, 8, static_cast<std::uint32_t>(vals.size()),
                         CodecKind::Fp8E4M3);
  REQUIRE(q.scales.size() == 1);
  CHECK(q.scales[0] == 448.0f);
  const auto back = dequantize_blockwise(q);
  for (std::size_t i = 0; i < vals.size(); ++i) CHECK(back[i] == vals[i]);
}

TEST_CASE("fp4 block codec is exact on grid multiples", "[codec]") {
  const float s = 0.37f;
  std::vector<float> vals;
  for (double m : {0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0}) {
    vals.push_back(static_cast<float>(m) * s);
    vals.push_back(-static_cast<float>(m) * s);
  }
  const auto q = quantize_blockwise(vals, 4, 128, CodecKind::Fp4E2M1);
  const auto back = dequantize_blockwise(q);
  for (std::size_t i = 0; i < vals.size(); ++i) CHECK(back[i] == vals[i]);
}

TEST_CASE("quantization codes are monotone within a block", "[codec]") {
  auto x = random_floats(128, 5150);
  std::sort(x.begin(), x.end());
  for (int bits = 4; bits <= 8; ++bits) {
    const auto q = quantize_blockwise(x, bits, 128);
    for (std::size_t i = 1; i < x.size(); ++i)
      CHECK(q.codes[i] >= q.codes[i - 1]);
  }
}

TEST_CASE("blocks are independent", "[codec]") {
  auto x = random_floats(384, 31);
  const auto q1 = quantize_blockwise(x, 5, 128);
  for (std::size_t i = 128; i < 256; ++i) x[i] *= -3.7f;
  const auto q2 = quantize_blockwise(x, 5, 128);
  for (std::size_t i = 0; i < 128; ++i) CHECK(q1.codes[i] == q2.codes[i]);
  for (std::size_t i = 256; i < 384; ++i) CHECK(q1.codes[i] == q2.codes[i]);
  CHECK(q1.scales[0] == q2.scales[0]);
  CHECK(q1.scales[2] == q2.scales[2]);
  CHECK(q1.scales[1] != q2.scales[1]);
}

TEST_CASE("mean roundtrip error decreases with bit width", "[codec]") {
  const std::size_t blocks = 1200;
  const auto x = random_floats(blocks * 128, 4242);
  double prev_mean = HUGE_VAL;
  for (int bits = 4; bits <= 8; ++bits) {
    const auto q = quantize_blockwise(x, bits, 128);
    const auto back = dequantize_blockwise(q);
    double mean = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      mean += std::fabs(static_cast<double>(back[i]) - x[i]);
    mean /= static_cast<double>(x.size());
    CHECK(mean < prev_mean);
    prev_mean = mean;
  }
}

TEST_CASE("non-finite input is rejected with the block index", "[codec]") {
  auto x = random_floats(300, 8);
  x[170] = std::numeric_limits<float>::infinity();
  try {
    quantize_blockwise(x, 4, 128);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("block 1") != std::string::npos);
  }
}

TEST_CASE("partial final block uses its own absmax", "[codec]") {
  std::vector<float> x(130, 0.0f);
  for (std::size_t i = 0; i < 128; ++i) x[i] = 8.0f;
  x[128] = 0.5f;
  x[129] = -1.0f;
  const auto q = quantize_blockwise(x, 4, 128);
  REQUIRE(q.scales.size() == 2);
  CHECK(q.scales[0] == 8.0f);
  CHECK(q.scales[1] == 1.0f);
  const auto back = dequantize_blockwise(q);
  CHECK(back[129] == -1.0f);
}

TEST_CASE("roundtrip deltas are finite and zero for zero elements",
          "[codec]") {
  auto x = random_floats(200, 64);
  x[3] = 0.0f;
  x[150] = 0.0f;
  for (int bits : {4, 8}) {
    const auto d = roundtrip_relative_delta(x, bits);
    CHECK(d[3] == 0.0);
    CHECK(d[150] == 0.0);
    for (double v : d) CHECK(std::isfinite(v));
  }
}

TEST_CASE("codec precondition violations throw", "[codec]") {
  const std::vector<float> x(16, 1.0f);
  CHECK_THROWS_AS(quantize_blockwise(x, 3, 128), std::invalid_argument);
  CHECK_THROWS_AS(quantize_blockwise(x, 9, 128), std::invalid_argument);
  CHECK_THROWS_AS(quantize_blockwise(x, 4, 0), std::invalid_argument);
  CHECK_THROWS_AS(quantize_blockwise(x, 5, 128, CodecKind::Fp8E4M3),
                  std::invalid_argument);
  CHECK_THROWS_AS(quantize_blockwise(x, 5, 128, CodecKind::Fp4E2M1),
                  std::invalid_argument);
}

TEST_CASE("pack/unpack codes is lossless at every width", "[codec]") {
  Rng rng(991);
  for (int bits = 4; bits <= 8; ++bits) {
    std::uniform_int_distribution<int> dist(0, (1 << bits) - 1);
    for (std::size_t n : {1u, 7u, 8u, 129u, 1000u}) {
      std::vector<std::uint8_t> codes(n);
      for (auto& c : codes) c = static_cast<std::uint8_t>(dist(rng));
      const auto packed = pack_codes(codes, bits);
      CHECK(packed.size() == (n * bits + 7) / 8);
      CHECK(unpack_codes(packed, bits, n) == codes);
    }
  }
}

TEST_CASE("dump and load are bit-exact", "[codec]") {
  for (auto kind : {CodecKind::SymmetricLinear, CodecKind::Fp4E2M1,
                    CodecKind::Fp8E4M3}) {
    const int bits = kind == CodecKind::Fp8E4M3 ? 8
                     : kind == CodecKind::Fp4E2M1 ? 4
                                                  : 6;
    const auto x = random_floats(777, 55u + static_cast<unsigned>(kind));
    auto q = quantize_blockwise(x, bits, 128, kind, {7, 111});
    std::stringstream ss;
    dump_tensor(q, ss);
    const auto q2 = load_tensor(ss);
    CHECK(q2.codes == q.codes);
    CHECK(q2.scales == q.scales);
    CHECK(q2.bit_width == q.bit_width);
    CHECK(q2.block_size == q.block_size);
    CHECK(q2.shape == q.shape);
    CHECK(q2.codec_kind == q.codec_kind);
  }
}

TEST_CASE("dump header layout is stable", "[codec]") {
  // 3 elements, bit width 4, block 2: header + 2 scales + 2 packed bytes.
  const std::vector<float> x = {1.0f, -1.0f, 0.5f};
  const auto q = quantize_blockwise(x, 4, 2);
  std::stringstream ss;
  dump_tensor(q, ss);
  const std::string bytes = ss.str();
  REQUIRE(bytes.size() == 4 + 2 + 1 + 1 + 4 + 1 + 8 + 2 * 4 + 2);
  CHECK(bytes.substr(0, 4) == "AGQT");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);  // version lo
  CHECK(static_cast<unsigned char>(bytes[5]) == 0);  // version hi
  CHECK(static_cast<unsigned char>(bytes[6]) == 0);  // symmetric linear
  CHECK(static_cast<unsigned char>(bytes[7]) == 4);  // bit width
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);  // block size lo
  CHECK(static_cast<unsigned char>(bytes[12]) == 1);  // ndim
  CHECK(static_cast<unsigned char>(bytes[13]) == 3);  // dims[0] lo
  // codes: +1 -> 14, -1 -> 0, +0.5 at scale 0.5 -> 14; LSB-first nibbles.
  const auto tail = bytes.substr(bytes.size() - 2);
  CHECK(static_cast<unsigned char>(tail[0]) == (14 | (0 << 4)));
  CHECK(static_cast<unsigned char>(tail[1]) == 14);
}

TEST_CASE("load rejects corrupted input", "[codec]") {
  const auto x = random_floats(32, 3);
  const auto q = quantize_blockwise(x, 4, 16);
  std::stringstream ss;
  dump_tensor(q, ss);
  std::string bytes = ss.str();
  {
    std::stringstream bad(std::string("BAD!") + bytes.substr(4));
    CHECK_THROWS_AS(load_tensor(bad), std::runtime_error);
  }
  {
    std::stringstream trunc(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(load_tensor(trunc), std::runtime_error);
  }
}
