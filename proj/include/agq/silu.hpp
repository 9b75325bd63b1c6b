#pragma once

#include <cmath>

#include "agq/linalg.hpp"
#include "agq/perturbation.hpp"

namespace agq {

inline double sigmoid(double y) {
  // Split on sign to avoid exp overflow.
  if (y >= 0.0) return 1.0 / (1.0 + std::exp(-y));
  const double e = std::exp(y);
  return e / (1.0 + e);
}

// z = x * y * sigmoid(y): the value path times the SiLU of the gate.
inline double silu_mul_forward(double x, double y) {
  return x * y * sigmoid(y);
}

struct SiluMulGrads {
  double dz_dx = 0.0;
  double dz_dy = 0.0;
};

// dz/dx = y s(y); dz/dy = x s(y) + x y s(y) (1 - s(y)).
inline SiluMulGrads silu_mul_grads(double x, double y) {
  const double s = sigmoid(y);
  return {y * s, x * s + x * y * s * (1.0 - s)};
}

// Gradients evaluated with a cached sigmoid value instead of recomputing it.
inline SiluMulGrads silu_mul_grads_cached(double x, double y, double s) {
  return {y * s, x * s + x * y * s * (1.0 - s)};
}

// Case 1 first-order bounds on the gradient perturbation, per element.
inline double silu_dzdx_bound_case1(double y, double abs_dy) {
  const double s = sigmoid(y);
  return std::fabs(y) * (s + std::fabs(y) * s * (1.0 - s)) * abs_dy;
}

inline double silu_dzdy_bound_case1(double x, double y, double abs_dx,
                                    double abs_dy) {
  const double s = sigmoid(y);
  return std::fabs(x) * s * std::fabs(1.0 + y * (1.0 - s)) * abs_dx +
         std::fabs(x) * s * (1.0 - s) * std::fabs(y) *
             std::fabs(2.0 + y * (1.0 - 2.0 * s)) * abs_dy;
}

// Case 2 bounds; ds is the cached-sigmoid relative perturbation.
inline double silu_dzdx_bound_case2(double y, double abs_dy, double abs_ds) {
  const double s = sigmoid(y);
  return std::fabs(y) * s * (abs_dy + abs_ds);
}

inline double silu_dzdy_bound_case2(double x, double y, double abs_dx,
                                    double abs_dy, double abs_ds) {
  const double s = sigmoid(y);
  return std::fabs(x) * s * std::fabs(1.0 + y * (1.0 - s)) * abs_dx +
         std::fabs(x) * std::fabs(y) * s * (1.0 - s) * abs_dy +
         std::fabs(x) * s * std::fabs(1.0 + y * (1.0 - 2.0 * s)) * abs_ds;
}

// One measured perturbation of the elementwise gradients over a pair of
// vectors. Empirical deltas are exact recomputations; dx/dy/ds are relative.
struct SiluMulErrorSample {
  double empirical_dzdx = 0.0;  // 2-norm over elements
  double empirical_dzdy = 0.0;
  double bound_dzdx = 0.0;  // 2-norm of per-element bounds at measured
  double bound_dzdy = 0.0;  // inf-norm perturbation levels
};

inline SiluMulErrorSample silu_mul_error_sample(const Vec& x, const Vec& y,
                                                const Vec& dx, const Vec& dy,
                                                const Vec* ds /* Case 2 */) {
  const Eigen::Index n = x.size();
  const double dx_inf = inf_norm(dx);
  const double dy_inf = inf_norm(dy);
  const double ds_inf = ds ? inf_norm(*ds) : 0.0;
  Vec err_x(n), err_y(n), b_x(n), b_y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const SiluMulGrads exact = silu_mul_grads(x[i], y[i]);
    const double xp = x[i] * (1.0 + dx[i]);
    const double yp = y[i] * (1.0 + dy[i]);
    SiluMulGrads pert;
    if (ds == nullptr) {
      pert = silu_mul_grads(xp, yp);
      b_x[i] = silu_dzdx_bound_case1(y[i], dy_inf);
      b_y[i] = silu_dzdy_bound_case1(x[i], y[i], dx_inf, dy_inf);
    } else {
      const double sp = sigmoid(y[i]) * (1.0 + (*ds)[i]);
      pert = silu_mul_grads_cached(xp, yp, sp);
      b_x[i] = silu_dzdx_bound_case2(y[i], dy_inf, ds_inf);
      b_y[i] = silu_dzdy_bound_case2(x[i], y[i], dx_inf, dy_inf, ds_inf);
    }
    err_x[i] = pert.dz_dx - exact.dz_dx;
    err_y[i] = pert.dz_dy - exact.dz_dy;
  }
  return {err_x.norm(), err_y.norm(), b_x.norm(), b_y.norm()};
}

}  // namespace agq
