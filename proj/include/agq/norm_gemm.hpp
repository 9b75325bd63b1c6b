#pragma once

#include <cmath>
#include <stdexcept>

#include "agq/rmsnorm.hpp"

namespace agq {

// Y = W U with U = RMSNorm(X); the weight gradient is U^T, so the gradient
// error is the deviation of the stored or recomputed U.

// Case 1 bound on |U' - U|_2 when U is recomputed from the quantized X:
// |gamma|_inf ( |X|_2 / r^2 + |X|_2^3 / (d r^4) ) |dX|_inf.
inline double norm_gemm_case1_bound(const RmsNormContext& ctx,
                                    double delta_inf) {
  const auto d = static_cast<double>(ctx.x.size());
  const double xn = ctx.x.norm();
  const double r = ctx.r;
  return inf_norm(ctx.gamma) *
         (xn / (r * r) + xn * xn * xn / (d * std::pow(r, 4))) * delta_inf;
}

// Case 2 bound when U itself is stored quantized: |U (.) dU|_2 <= |U|_2 |dU|_inf.
inline double norm_gemm_case2_bound(const Vec& u, double delta_u_inf) {
  return u.norm() * delta_u_inf;
}

struct NormGemmErrorSample {
  double empirical = 0.0;  // |U' - U|_2
  double bound = 0.0;
};

// Case 1: U recomputed from x' = x (1 + dx) with r recomputed as well.
inline NormGemmErrorSample norm_gemm_error_case1(const RmsNormContext& ctx,
                                                 const Vec& dx) {
  const Vec u = rmsnorm_forward(ctx);
  const Vec xp = ctx.x.cwiseProduct(Vec::Ones(ctx.x.size()) + dx);
  const double rp = RmsNormContext::rms(xp, ctx.epsilon);
  const Vec up = ctx.gamma.cwiseProduct(xp) / rp;
  return {(up - u).norm(), norm_gemm_case1_bound(ctx, inf_norm(dx))};
}

// Case 2: the GEMM input is stored directly, U' = U (1 + dU).
inline NormGemmErrorSample norm_gemm_error_case2(const RmsNormContext& ctx,
                                                 const Vec& du) {
  const Vec u = rmsnorm_forward(ctx);
  return {u.cwiseProduct(du).norm(), norm_gemm_case2_bound(u, inf_norm(du))};
}

// Shape guard for the full operation signature; the bound itself does not
// involve W.
inline void norm_gemm_check_weight(const RmsNormContext& ctx, const Mat& w) {
  if (w.cols() != ctx.x.size())
    throw std::invalid_argument("norm_gemm: W column count must equal d");
}

}  // namespace agq
