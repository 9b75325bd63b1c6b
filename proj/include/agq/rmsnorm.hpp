#pragma once

#include <cmath>
#include <stdexcept>

#include "agq/linalg.hpp"
#include "agq/perturbation.hpp"

namespace agq {

// y = gamma .* x / r with r = sqrt(|x|^2 / d + epsilon).
struct RmsNormContext {
  Vec x;
  Vec gamma;
  double epsilon = 1e-6;
  double r = 0.0;

  static RmsNormContext make(Vec x, Vec gamma, double epsilon = 1e-6) {
    if (x.size() == 0 || x.size() != gamma.size())
      throw std::invalid_argument("rmsnorm: bad dimensions");
    RmsNormContext ctx;
    ctx.r = rms(x, epsilon);
    ctx.x = std::move(x);
    ctx.gamma = std::move(gamma);
    ctx.epsilon = epsilon;
    if (!(ctx.r > 0.0))
      throw std::invalid_argument("rmsnorm: r must be positive");
    return ctx;
  }

  static double rms(const Vec& x, double epsilon) {
    return std::sqrt(x.squaredNorm() / static_cast<double>(x.size()) + epsilon);
  }
};

inline Vec rmsnorm_forward(const RmsNormContext& ctx) {
  return ctx.gamma.cwiseProduct(ctx.x) / ctx.r;
}

// J = diag(gamma)/r - (1/d) diag(gamma) x x^T / r^3.
inline Mat rmsnorm_jacobian_at(const Vec& x, const Vec& gamma, double r) {
  const auto d = static_cast<double>(x.size());
  Mat j = -(gamma.asDiagonal() * (x * x.transpose())) / (d * r * r * r);
  j += (gamma / r).asDiagonal();
  return j;
}

inline Mat rmsnorm_jacobian(const RmsNormContext& ctx) {
  return rmsnorm_jacobian_at(ctx.x, ctx.gamma, ctx.r);
}

// Case 1: x' = x .* (1 + dx), r recomputed from x', exact J(x').
inline Mat rmsnorm_jacobian_case1(const RmsNormContext& ctx, const Vec& dx) {
  const Vec xp = ctx.x.cwiseProduct(Vec::Ones(ctx.x.size()) + dx);
  const double rp = RmsNormContext::rms(xp, ctx.epsilon);
  if (!(rp > 0.0)) throw std::runtime_error("rmsnorm: perturbed r <= 0");
  return rmsnorm_jacobian_at(xp, ctx.gamma, rp);
}

// Case 2: x' as above and the cached r perturbed independently,
// r' = r (1 + dr).
inline Mat rmsnorm_jacobian_case2(const RmsNormContext& ctx, const Vec& dx,
                                  double dr) {
  const Vec xp = ctx.x.cwiseProduct(Vec::Ones(ctx.x.size()) + dx);
  const double rp = ctx.r * (1.0 + dr);
  if (!(rp > 0.0)) throw std::runtime_error("rmsnorm: perturbed r <= 0");
  return rmsnorm_jacobian_at(xp, ctx.gamma, rp);
}

inline Mat rmsnorm_perturbed_jacobian(const RmsNormContext& ctx,
                                      const PerturbationSpec& spec, Rng& rng) {
  spec.check();
  const Vec dx = sample_delta(spec, ctx.x, rng);
  if (spec.mode == CaseMode::Case1Recompute)
    return rmsnorm_jacobian_case1(ctx, dx);
  const double dr = sample_scalar_delta(spec, ctx.r, rng);
  return rmsnorm_jacobian_case2(ctx, dx, dr);
}

// |dJ|_2 <~ 3 |gamma|_inf |dx|_inf ( |x|^2 / (d r^3) + |x|^4 / (d^2 r^5) ).
inline double rmsnorm_case1_bound(const RmsNormContext& ctx, double delta_inf) {
  if (delta_inf < 0.0) throw std::invalid_argument("delta_inf must be >= 0");
  const auto d = static_cast<double>(ctx.x.size());
  const double x2 = ctx.x.squaredNorm();
  const double r = ctx.r;
  return 3.0 * inf_norm(ctx.gamma) * delta_inf *
         (x2 / (d * r * r * r) + x2 * x2 / (d * d * std::pow(r, 5)));
}

// |dJ|_2 <~ 6 |gamma|_inf eps_q / r.
inline double rmsnorm_case2_bound(const RmsNormContext& ctx, double eps_q) {
  if (eps_q < 0.0) throw std::invalid_argument("eps_q must be >= 0");
  return 6.0 * inf_norm(ctx.gamma) * eps_q / ctx.r;
}

// First-order expansions of dJ, kept separate from the exact perturbed
// Jacobians so the symbolic forms can be checked on their own.
inline Mat rmsnorm_case1_delta_first_order(const RmsNormContext& ctx,
                                           const Vec& dx) {
  const auto d = static_cast<double>(ctx.x.size());
  const double r = ctx.r;
  const double delta_r =
      ctx.x.cwiseProduct(ctx.x).dot(dx) / (d * r);  // (1/(2r)) (2/d) sum x^2 dx
  const Vec xdx = dx.cwiseProduct(ctx.x);
  Mat out = (-delta_r / (r * r)) * Mat(ctx.gamma.asDiagonal());
  out += (3.0 * delta_r / (d * std::pow(r, 4))) *
         (ctx.gamma.asDiagonal() * (ctx.x * ctx.x.transpose()));
  out -= (ctx.gamma.asDiagonal() *
          (ctx.x * xdx.transpose() + xdx * ctx.x.transpose())) /
         (d * r * r * r);
  return out;
}

inline Mat rmsnorm_case2_delta_first_order(const RmsNormContext& ctx,
                                           const Vec& dx, double dr) {
  const auto d = static_cast<double>(ctx.x.size());
  const double r = ctx.r;
  const Vec xdx = dx.cwiseProduct(ctx.x);
  Mat out = (-dr / r) * Mat(ctx.gamma.asDiagonal());
  out += (3.0 * dr / (d * r * r * r)) *
         (ctx.gamma.asDiagonal() * (ctx.x * ctx.x.transpose()));
  out -= (ctx.gamma.asDiagonal() *
          (ctx.x * xdx.transpose() + xdx * ctx.x.transpose())) /
         (d * r * r * r);
  return out;
}

}  // namespace agq
