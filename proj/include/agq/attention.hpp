#pragma once

#include <cmath>
#include <stdexcept>

#include "agq/linalg.hpp"
#include "agq/perturbation.hpp"

namespace agq {

// Single-head scaled dot-product attention:
//   S = Q K^T / sqrt(d),  P = softmax(S) row-wise,  A = P V.
struct AttentionForward {
  Mat s;
  Mat p;
  Mat a;
};

inline AttentionForward attention_forward(const Mat& q, const Mat& k,
                                          const Mat& v) {
  if (q.cols() != k.cols() || q.rows() != k.rows() || k.rows() != v.rows())
    throw std::invalid_argument("attention: inconsistent shapes");
  AttentionForward f;
  f.s = q * k.transpose() / std::sqrt(static_cast<double>(q.cols()));
  f.p = softmax_rows(f.s);
  f.a = f.p * v;
  return f;
}

struct AttentionGrads {
  Mat dq;
  Mat dk;
  Mat dv;
};

// Backward pass for upstream dA:
//   dV = P^T dA,  dP = dA V^T,  z = rowsum(P (.) dP),
//   dS = P (.) (dP - z 1^T),  dQ = dS K / sqrt(d),  dK = dS^T Q / sqrt(d).
inline AttentionGrads attention_grads(const Mat& q, const Mat& k, const Mat& v,
                                      const Mat& da) {
  const AttentionForward f = attention_forward(q, k, v);
  if (da.rows() != f.a.rows() || da.cols() != f.a.cols())
    throw std::invalid_argument("attention: upstream gradient shape mismatch");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const Mat dp = da * v.transpose();
  const Vec z = (f.p.cwiseProduct(dp)).rowwise().sum();
  const Mat ds = f.p.cwiseProduct(dp - z * Mat::Ones(1, dp.cols()));
  AttentionGrads g;
  g.dq = ds * k * inv_sqrt_d;
  g.dk = ds.transpose() * q * inv_sqrt_d;
  g.dv = f.p.transpose() * da;
  return g;
}

// Error harness. Channels follow the per-operand decomposition of the
// backward pass with the implicit unit upstream (dP read as V^T), which
// requires a square V (one value column per row). The dV channel is the
// softmax matrix itself since dA/dV = P^T.
//
// Case 1 recomputes everything from the stored quantized Q', K', V'.
// Case 2 additionally reads the cached product A' = A (1 + dA) for the
// rowsum statistic z: with dP = V^T, z = diag(P V) = diag(A), so a cached A
// replaces that recomputation.
struct AttentionChannels {
  Mat p;   // dA/dV = P^T, reported via P
  Mat dq;
  Mat dk;
};

inline AttentionChannels attention_channels(const Mat& q, const Mat& k,
                                            const Mat& v,
                                            const Mat* cached_a = nullptr) {
  if (v.rows() != v.cols())
    throw std::invalid_argument(
        "attention error harness needs a square V (d_v == L)");
  const AttentionForward f = attention_forward(q, k, v);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  const Mat dp = v.transpose();
  const Vec z = cached_a ? Vec(cached_a->diagonal()) : Vec(f.a.diagonal());
  const Mat ds = f.p.cwiseProduct(dp - z * Mat::Ones(1, dp.cols()));
  AttentionChannels ch;
  ch.p = f.p;
  ch.dq = ds * k * inv_sqrt_d;
  ch.dk = ds.transpose() * q * inv_sqrt_d;
  return ch;
}

struct AttentionErrorSample {
  double empirical_dv = 0.0;
  double empirical_dq = 0.0;
  double empirical_dk = 0.0;
  double bound_dv = 0.0;
  double bound_dq = 0.0;
  double bound_dk = 0.0;
};

// dq_rel etc. are relative perturbation matrices; da_rel is used only in
// Case 2 (pass nullptr for Case 1).
inline AttentionErrorSample attention_error_sample(const Mat& q, const Mat& k,
                                                   const Mat& v,
                                                   const Mat& dq_rel,
                                                   const Mat& dk_rel,
                                                   const Mat& dv_rel,
                                                   const Mat* da_rel) {
  const double sqrt_d = std::sqrt(static_cast<double>(q.cols()));
  const AttentionChannels exact = attention_channels(q, k, v);
  const AttentionForward f = attention_forward(q, k, v);

  const Mat qp = q.cwiseProduct(Mat::Ones(q.rows(), q.cols()) + dq_rel);
  const Mat kp = k.cwiseProduct(Mat::Ones(k.rows(), k.cols()) + dk_rel);
  const Mat vp = v.cwiseProduct(Mat::Ones(v.rows(), v.cols()) + dv_rel);

  AttentionChannels pert;
  Mat a_cached;
  if (da_rel != nullptr) {
    a_cached = f.a.cwiseProduct(Mat::Ones(f.a.rows(), f.a.cols()) + *da_rel);
    pert = attention_channels(qp, kp, vp, &a_cached);
  } else {
    pert = attention_channels(qp, kp, vp);
  }

  AttentionErrorSample s;
  s.empirical_dv = spectral_norm(pert.p - exact.p);
  s.empirical_dq = spectral_norm(pert.dq - exact.dq);
  s.empirical_dk = spectral_norm(pert.dk - exact.dk);

  // Common factor of every printed bound:
  // G = | (Q (.) dQ) K^T + Q (K (.) dK)^T |_2 at the measured perturbations.
  const Mat g_mat =
      q.cwiseProduct(dq_rel) * k.transpose() +
      q * (k.cwiseProduct(dk_rel)).transpose();
  const double g = spectral_norm(g_mat);
  const double qn = spectral_norm(q);
  const double kn = spectral_norm(k);
  const double vn = spectral_norm(v);
  const auto d = static_cast<double>(q.cols());

  if (da_rel == nullptr) {
    s.bound_dv = g / sqrt_d;
    s.bound_dk = vn * kn / d * g;
    s.bound_dq = vn * qn / d * g;
  } else {
    const double an = spectral_norm(f.a);
    const double ada = spectral_norm(f.a.cwiseProduct(*da_rel));
    const double dv_inf = inf_norm(dv_rel);
    const double dk_inf = inf_norm(dk_rel);
    s.bound_dv = an / vn * (g / sqrt_d + ada);
    s.bound_dk = 2.0 / sqrt_d * vn * g + 2.0 * vn * dv_inf + ada;
    s.bound_dq = (2.0 / sqrt_d * vn * kn * g + 2.0 * vn * kn * dv_inf +
                  kn * ada + vn * dk_inf) /
                 sqrt_d;
  }
  return s;
}

}  // namespace agq
