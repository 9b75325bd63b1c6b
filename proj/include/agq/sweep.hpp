#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "agq/attention.hpp"
#include "agq/error_report.hpp"
#include "agq/norm_gemm.hpp"
#include "agq/rmsnorm.hpp"
#include "agq/silu.hpp"

namespace agq {

enum class SweepLayer { RmsNorm, SiluMul, RmsNormGemm, Attention };

inline const char* sweep_layer_name(SweepLayer l) {
  switch (l) {
    case SweepLayer::RmsNorm: return "rmsnorm";
    case SweepLayer::SiluMul: return "silu_mul";
    case SweepLayer::RmsNormGemm: return "rmsnorm_gemm";
    case SweepLayer::Attention: return "attention";
  }
  return "?";
}

namespace detail {

inline ErrorReport make_report(std::string channel, const PerturbationSpec& spec,
                               int size, double empirical, double bound) {
  ErrorReport r;
  r.layer = std::move(channel);
  r.case_id = spec.mode == CaseMode::Case1Recompute ? 1 : 2;
  r.size = size;
  r.epsilon_q = spec.epsilon_q;
  r.empirical = empirical;
  r.bound = bound;
  r.finalize();
  return r;
}

}  // namespace detail

// One perturbation measurement of the RMSNorm Jacobian: empirical spectral
// norm of the exact gradient difference against the matching first-order
// bound at the measured perturbation magnitudes.
inline ErrorReport rmsnorm_error(const RmsNormContext& ctx,
                                 const PerturbationSpec& spec, Rng& rng) {
  spec.check();
  const Vec dx = sample_delta(spec, ctx.x, rng);
  ErrorReport r;
  if (spec.mode == CaseMode::Case1Recompute) {
    const Mat dj = rmsnorm_jacobian_case1(ctx, dx) - rmsnorm_jacobian(ctx);
    r = detail::make_report("rmsnorm", spec, static_cast<int>(ctx.x.size()),
                            spectral_norm(dj),
                            rmsnorm_case1_bound(ctx, inf_norm(dx)));
  } else {
    const double dr = sample_scalar_delta(spec, ctx.r, rng);
    const Mat dj = rmsnorm_jacobian_case2(ctx, dx, dr) - rmsnorm_jacobian(ctx);
    const double eps_meas = std::max(inf_norm(dx), std::fabs(dr));
    r = detail::make_report("rmsnorm", spec, static_cast<int>(ctx.x.size()),
                            spectral_norm(dj),
                            rmsnorm_case2_bound(ctx, eps_meas));
  }
  return r;
}

// One measurement per partial derivative of the elementwise gated product.
inline std::vector<ErrorReport> silu_mul_error(const Vec& x, const Vec& y,
                                               const PerturbationSpec& spec,
                                               Rng& rng) {
  spec.check();
  const Vec dx = sample_delta(spec, x, rng);
  const Vec dy = sample_delta(spec, y, rng);
  SiluMulErrorSample s;
  if (spec.mode == CaseMode::Case1Recompute) {
    s = silu_mul_error_sample(x, y, dx, dy, nullptr);
  } else {
    Vec sig(y.size());
    for (Eigen::Index i = 0; i < y.size(); ++i) sig[i] = sigmoid(y[i]);
    const Vec ds = sample_delta(spec, sig, rng);
    s = silu_mul_error_sample(x, y, dx, dy, &ds);
  }
  const int size = static_cast<int>(x.size());
  return {detail::make_report("silu_mul/dzdx", spec, size, s.empirical_dzdx,
                              s.bound_dzdx),
          detail::make_report("silu_mul/dzdy", spec, size, s.empirical_dzdy,
                              s.bound_dzdy)};
}

// Weight-gradient error of a GEMM fed by RMSNorm output: deviation of the
// stored or recomputed U. W only fixes the operation shape.
inline ErrorReport rmsnorm_gemm_error(const RmsNormContext& ctx, const Mat& w,
                                      const PerturbationSpec& spec, Rng& rng) {
  spec.check();
  norm_gemm_check_weight(ctx, w);
  NormGemmErrorSample s;
  if (spec.mode == CaseMode::Case1Recompute) {
    const Vec dx = sample_delta(spec, ctx.x, rng);
    s = norm_gemm_error_case1(ctx, dx);
  } else {
    const Vec u = rmsnorm_forward(ctx);
    const Vec du = sample_delta(spec, u, rng);
    s = norm_gemm_error_case2(ctx, du);
  }
  return detail::make_report("rmsnorm_gemm", spec,
                             static_cast<int>(ctx.x.size()), s.empirical,
                             s.bound);
}

// One measurement per attention gradient channel; V must be square (see
// attention_channels).
inline std::vector<ErrorReport> attention_error(const Mat& q, const Mat& k,
                                                const Mat& v,
                                                const PerturbationSpec& spec,
                                                Rng& rng) {
  spec.check();
  const Mat dq = sample_delta(spec, q, rng);
  const Mat dk = sample_delta(spec, k, rng);
  const Mat dv = sample_delta(spec, v, rng);
  AttentionErrorSample s;
  if (spec.mode == CaseMode::Case1Recompute) {
    s = attention_error_sample(q, k, v, dq, dk, dv, nullptr);
  } else {
    const Mat a = attention_forward(q, k, v).a;
    const Mat da = sample_delta(spec, a, rng);
    s = attention_error_sample(q, k, v, dq, dk, dv, &da);
  }
  const int size = static_cast<int>(q.rows());
  return {
      detail::make_report("attention/dV", spec, size, s.empirical_dv, s.bound_dv),
      detail::make_report("attention/dQ", spec, size, s.empirical_dq, s.bound_dq),
      detail::make_report("attention/dK", spec, size, s.empirical_dk, s.bound_dk)};
}

// Head dimension for attention sweeps; size selects the sequence length L.
inline constexpr int kSweepAttentionHeadDim = 16;

// Runs `trials` independent perturbation measurements for one layer family.
// Inputs are drawn unit-scale from a per-trial stream derived from (seed,
// layer, case, size, epsilon index, trial), so reports are reproducible and
// order-independent. One report per gradient channel per trial.
inline std::vector<ErrorReport> bound_sweep(
    SweepLayer layer, const std::set<CaseMode>& cases,
    const std::vector<double>& epsilons, int trials, std::uint64_t seed,
    int size,
    PerturbationSource source = PerturbationSource::SyntheticUniform,
    int codec_bits = 4) {
  if (trials < 1) throw std::invalid_argument("trials must be >= 1");
  if (size < 2) throw std::invalid_argument("size must be >= 2");
  std::vector<ErrorReport> out;
  const std::uint64_t layer_tag =
      static_cast<std::uint64_t>(layer) * 1000003ULL + size;

  for (CaseMode mode : cases) {
    const int case_id = mode == CaseMode::Case1Recompute ? 1 : 2;
    for (std::size_t ei = 0; ei < epsilons.size(); ++ei) {
      PerturbationSpec spec;
      spec.epsilon_q = epsilons[ei];
      spec.mode = mode;
      spec.source = source;
      spec.codec_bits = codec_bits;
      for (int t = 0; t < trials; ++t) {
        Rng rng = make_rng(seed, layer_tag * 4 + case_id,
                           ei * 1000000ULL + static_cast<std::uint64_t>(t));
        std::vector<ErrorReport> reports;
        switch (layer) {
          case SweepLayer::RmsNorm: {
            const Vec x = random_vector(size, rng);
            const Vec gamma = random_vector(size, rng);
            const auto ctx = RmsNormContext::make(x, gamma);
            reports = {rmsnorm_error(ctx, spec, rng)};
            break;
          }
          case SweepLayer::SiluMul: {
            const Vec x = random_vector(size, rng);
            const Vec y = random_vector(size, rng);
            reports = silu_mul_error(x, y, spec, rng);
            break;
          }
          case SweepLayer::RmsNormGemm: {
            const Vec x = random_vector(size, rng);
            const Vec gamma = random_vector(size, rng);
            const auto ctx = RmsNormContext::make(x, gamma);
            const Mat w = random_matrix(size, size, rng,
                                        1.0 / std::sqrt(double(size)));
            reports = {rmsnorm_gemm_error(ctx, w, spec, rng)};
            break;
          }
          case SweepLayer::Attention: {
            const Mat q = random_matrix(size, kSweepAttentionHeadDim, rng);
            const Mat k = random_matrix(size, kSweepAttentionHeadDim, rng);
            const Mat v = random_matrix(size, size, rng);
            reports = attention_error(q, k, v, spec, rng);
            break;
          }
        }
        for (auto& r : reports) {
          r.trial = t;
          out.push_back(std::move(r));
        }
      }
    }
  }
  return out;
}

}  // namespace agq
