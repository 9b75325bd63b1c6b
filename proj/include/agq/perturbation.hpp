#pragma once

#include <stdexcept>
#include <vector>

#include "agq/linalg.hpp"
#include "agq/quantize.hpp"

namespace agq {

enum class CaseMode {
  Case1Recompute,  // store quantized inputs, recompute intermediates
  Case2Cache,      // additionally store quantized intermediates
};

enum class PerturbationSource {
  SyntheticUniform,  // i.i.d. uniform in [-epsilon_q, +epsilon_q]
  CodecRoundtrip,    // measured per element from a real quantization roundtrip
};

struct PerturbationSpec {
  double epsilon_q = 0.0;
  CaseMode mode = CaseMode::Case1Recompute;
  PerturbationSource source = PerturbationSource::SyntheticUniform;
  int codec_bits = 4;  // used when source == CodecRoundtrip

  void check() const {
    if (epsilon_q < 0.0)
      throw std::invalid_argument("epsilon_q must be non-negative");
    if (epsilon_q >= 1.0)
      throw std::invalid_argument("relative perturbations require epsilon_q < 1");
  }
};

inline Vec uniform_delta(Eigen::Index n, double eps, Rng& rng) {
  std::uniform_real_distribution<double> u(-eps, eps);
  Vec d(n);
  for (Eigen::Index i = 0; i < n; ++i) d[i] = u(rng);
  return d;
}

inline Mat uniform_delta(Eigen::Index rows, Eigen::Index cols, double eps,
                         Rng& rng) {
  std::uniform_real_distribution<double> u(-eps, eps);
  Mat d(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) d(i, j) = u(rng);
  return d;
}

// Relative delta of a 4..8 bit roundtrip of x, elementwise: x' = x (1 + d).
inline Vec codec_delta(const Vec& x, int bits) {
  std::vector<float> xf(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    xf[i] = static_cast<float>(x[i]);
  const auto d = roundtrip_relative_delta(xf, bits);
  Vec out(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = d[i];
  return out;
}

inline Mat codec_delta(const Mat& x, int bits) {
  Vec flat(x.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) flat[k++] = x(i, j);
  const Vec d = codec_delta(flat, bits);
  Mat out(x.rows(), x.cols());
  k = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j) out(i, j) = d[k++];
  return out;
}

inline Vec sample_delta(const PerturbationSpec& spec, const Vec& x, Rng& rng) {
  if (spec.source == PerturbationSource::SyntheticUniform)
    return uniform_delta(x.size(), spec.epsilon_q, rng);
  return codec_delta(x, spec.codec_bits);
}

inline Mat sample_delta(const PerturbationSpec& spec, const Mat& x, Rng& rng) {
  if (spec.source == PerturbationSource::SyntheticUniform)
    return uniform_delta(x.rows(), x.cols(), spec.epsilon_q, rng);
  return codec_delta(x, spec.codec_bits);
}

inline double sample_scalar_delta(const PerturbationSpec& spec, double x,
                                  Rng& rng) {
  if (spec.source == PerturbationSource::SyntheticUniform) {
    std::uniform_real_distribution<double> u(-spec.epsilon_q, spec.epsilon_q);
    return u(rng);
  }
  Vec v(1);
  v[0] = x;
  return codec_delta(v, spec.codec_bits)[0];
}

}  // namespace agq
