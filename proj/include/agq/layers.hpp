#pragma once

#include <map>
#include <stdexcept>
#include <string>

#include "agq/attention.hpp"
#include "agq/linalg.hpp"
#include "agq/quantize.hpp"
#include "agq/rmsnorm.hpp"
#include "agq/silu.hpp"

namespace agq {

enum class LayerRole {
  RmsNorm,
  QkvProj,
  Attention,
  OutProj,
  Ffn1,
  SiluMul,
  Ffn2,
};

inline const char* layer_role_name(LayerRole r) {
  switch (r) {
    case LayerRole::RmsNorm: return "rmsnorm";
    case LayerRole::QkvProj: return "qkv_proj";
    case LayerRole::Attention: return "attention";
    case LayerRole::OutProj: return "out_proj";
    case LayerRole::Ffn1: return "ffn1";
    case LayerRole::SiluMul: return "silu_mul";
    case LayerRole::Ffn2: return "ffn2";
  }
  return "?";
}

enum class SaveStrategy {
  RecomputeIntermediates,  // store inputs only, at the entry's bit width
  CacheIntermediates,      // store inputs and intermediates, quantized
  NoQuant,                 // store inputs and intermediates, full precision
};

struct PolicyEntry {
  int bit_width = 0;  // 0 means FULL
  SaveStrategy strategy = SaveStrategy::NoQuant;
};

struct ActivationPolicy {
  std::map<LayerRole, PolicyEntry> entries;

  static ActivationPolicy all_full() {
    ActivationPolicy p;
    for (auto role : {LayerRole::RmsNorm, LayerRole::QkvProj,
                      LayerRole::Attention, LayerRole::OutProj, LayerRole::Ffn1,
                      LayerRole::SiluMul, LayerRole::Ffn2})
      p.entries[role] = {0, SaveStrategy::NoQuant};
    return p;
  }

  // Default policy: 4-bit inputs with recomputation everywhere except the
  // attention internals (kept full precision) and the output-projection
  // input (cached quantized; recomputing it would replay attention).
  static ActivationPolicy agoq_default(int bits = 4) {
    ActivationPolicy p;
    p.entries[LayerRole::RmsNorm] = {bits, SaveStrategy::RecomputeIntermediates};
    p.entries[LayerRole::QkvProj] = {bits, SaveStrategy::RecomputeIntermediates};
    p.entries[LayerRole::Attention] = {0, SaveStrategy::NoQuant};
    p.entries[LayerRole::OutProj] = {bits, SaveStrategy::CacheIntermediates};
    p.entries[LayerRole::Ffn1] = {bits, SaveStrategy::RecomputeIntermediates};
    p.entries[LayerRole::SiluMul] = {bits, SaveStrategy::RecomputeIntermediates};
    p.entries[LayerRole::Ffn2] = {bits, SaveStrategy::RecomputeIntermediates};
    p.validate();
    return p;
  }

  const PolicyEntry& at(LayerRole role) const {
    const auto it = entries.find(role);
    if (it == entries.end())
      throw std::runtime_error(std::string("policy has no entry for role ") +
                               layer_role_name(role));
    return it->second;
  }

  void validate() const {
    for (const auto& [role, e] : entries) {
      if (e.bit_width != 0 && (e.bit_width < 4 || e.bit_width > 8))
        throw std::invalid_argument("policy bit width must be FULL or in [4,8]");
      if (e.strategy == SaveStrategy::NoQuant && e.bit_width != 0)
        throw std::invalid_argument("NO_QUANT entries store full precision");
    }
  }
};

struct LayerParams {
  int seq_len = 32;
  int model_dim = 64;
  int hidden_mult = 4;
  bool gated = true;     // two FFN1 projections (gate and value)
  bool residual = false;
  Mat wq, wk, wv, wo;    // model_dim x model_dim
  Mat w_gate, w_value;   // model_dim x hidden
  Mat w2;                // hidden x model_dim
  Vec gamma1, gamma2;

  int hidden_dim() const { return model_dim * hidden_mult; }

  static LayerParams random(int seq_len, int model_dim, int hidden_mult,
                            std::uint64_t seed, bool gated = true) {
    if (hidden_mult != 4 && hidden_mult != 8)
      throw std::invalid_argument("hidden multiplier must be 4 or 8");
    LayerParams p;
    p.seq_len = seq_len;
    p.model_dim = model_dim;
    p.hidden_mult = hidden_mult;
    p.gated = gated;
    Rng rng = make_rng(seed, /*stream=*/0xF00D);
    const double std = 1.0 / std::sqrt(static_cast<double>(model_dim));
    const int h = p.hidden_dim();
    p.wq = random_matrix(model_dim, model_dim, rng, std);
    p.wk = random_matrix(model_dim, model_dim, rng, std);
    p.wv = random_matrix(model_dim, model_dim, rng, std);
    p.wo = random_matrix(model_dim, model_dim, rng, std);
    p.w_gate = random_matrix(model_dim, h, rng, std);
    p.w_value = random_matrix(model_dim, h, rng, std);
    p.w2 = random_matrix(h, model_dim, rng, std);
    p.gamma1 = Vec::Ones(model_dim);
    p.gamma2 = Vec::Ones(model_dim);
    return p;
  }
};

// One stored tensor: either the exact matrix or its block-quantized form.
struct SavedEntry {
  bool is_quantized = false;
  Mat full;
  QuantizedTensor q;
  Eigen::Index rows = 0, cols = 0;

  static SavedEntry exact(const Mat& m) {
    SavedEntry e;
    e.full = m;
    e.rows = m.rows();
    e.cols = m.cols();
    return e;
  }

  static SavedEntry quantized(const Mat& m, int bits) {
    SavedEntry e;
    e.is_quantized = true;
    e.rows = m.rows();
    e.cols = m.cols();
    std::vector<float> flat(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        flat[k++] = static_cast<float>(m(i, j));
    e.q = quantize_blockwise(flat, bits, kDefaultBlockSize,
                             CodecKind::SymmetricLinear,
                             {static_cast<std::uint64_t>(m.rows()),
                              static_cast<std::uint64_t>(m.cols())});
    return e;
  }

  static SavedEntry store(const Mat& m, const PolicyEntry& e) {
    return e.bit_width == 0 ? exact(m) : quantized(m, e.bit_width);
  }

  Mat read() const {
    if (!is_quantized) return full;
    const auto flat = dequantize_blockwise(q);
    Mat m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = flat[k++];
    return m;
  }
};

struct SavedActivations {
  std::map<std::string, SavedEntry> entries;

  bool has(const std::string& name) const { return entries.count(name) > 0; }

  Mat read(const std::string& name) const {
    const auto it = entries.find(name);
    if (it == entries.end())
      throw std::runtime_error("saved activations: missing tensor '" + name +
                               "' required by the policy");
    return it->second.read();
  }
};

namespace detail {

inline Mat rmsnorm_rows(const Mat& x, const Vec& gamma, double eps, Vec* r_out) {
  Mat y(x.rows(), x.cols());
  Vec r(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    r[i] = std::sqrt(x.row(i).squaredNorm() / x.cols() + eps);
    y.row(i) = x.row(i).cwiseProduct(gamma.transpose()) / r[i];
  }
  if (r_out) *r_out = r;
  return y;
}

// Row-wise RMSNorm VJP; also accumulates the gamma gradient.
inline Mat rmsnorm_rows_backward(const Mat& x, const Vec& gamma, const Vec& r,
                                 const Mat& dy, Vec* dgamma) {
  const auto d = static_cast<double>(x.cols());
  Mat dx(x.rows(), x.cols());
  if (dgamma) *dgamma = Vec::Zero(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double ri = r[i];
    const auto xi = x.row(i).transpose();
    const auto dyi = dy.row(i).transpose();
    const double inner = dyi.cwiseProduct(gamma).dot(xi);
    dx.row(i) = (gamma.cwiseProduct(dyi) / ri - xi * (inner / (d * ri * ri * ri)))
                    .transpose();
    if (dgamma) *dgamma += dyi.cwiseProduct(xi) / ri;
  }
  return dx;
}

inline Mat sigmoid_mat(const Mat& y) {
  Mat s(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i)
    for (Eigen::Index j = 0; j < y.cols(); ++j) s(i, j) = sigmoid(y(i, j));
  return s;
}

}  // namespace detail

// Forward pass. The computation itself always runs in full precision;
// the policy only controls what lands in SavedActivations.
struct LayerForward {
  Mat output;
  SavedActivations saved;
};

inline LayerForward layer_forward(const LayerParams& p, const Mat& x,
                                  const ActivationPolicy& policy,
                                  double eps = 1e-6) {
  if (x.rows() != p.seq_len || x.cols() != p.model_dim)
    throw std::invalid_argument("layer input shape mismatch");
  policy.validate();

  Vec r1, r2;
  const Mat xn = detail::rmsnorm_rows(x, p.gamma1, eps, &r1);
  const Mat q = xn * p.wq, k = xn * p.wk, v = xn * p.wv;
  const AttentionForward att = attention_forward(q, k, v);
  const Mat o = att.a * p.wo;
  const Mat x2 = p.residual ? Mat(o + x) : o;
  const Mat xn2 = detail::rmsnorm_rows(x2, p.gamma2, eps, &r2);
  const Mat gate = xn2 * p.w_gate;
  const Mat value = p.gated ? Mat(xn2 * p.w_value)
                            : Mat::Ones(gate.rows(), gate.cols());
  const Mat sig = detail::sigmoid_mat(gate);
  const Mat z = value.cwiseProduct(gate).cwiseProduct(sig);
  const Mat y = p.residual ? Mat(z * p.w2 + x2) : Mat(z * p.w2);

  LayerForward out;
  out.output = y;
  auto& s = out.saved.entries;

  const auto& norm = policy.at(LayerRole::RmsNorm);
  s["norm1_input"] = SavedEntry::store(x, norm);
  s["norm2_input"] = SavedEntry::store(x2, norm);
  if (norm.strategy != SaveStrategy::RecomputeIntermediates) {
    s["norm1_r"] = SavedEntry::store(r1.transpose(), norm);
    s["norm2_r"] = SavedEntry::store(r2.transpose(), norm);
  }

  const auto& qkv = policy.at(LayerRole::QkvProj);
  if (qkv.strategy != SaveStrategy::RecomputeIntermediates)
    s["qkv_input"] = SavedEntry::store(xn, qkv);

  const auto& attn = policy.at(LayerRole::Attention);
  if (attn.strategy != SaveStrategy::RecomputeIntermediates) {
    s["attn_q"] = SavedEntry::store(q, attn);
    s["attn_k"] = SavedEntry::store(k, attn);
    s["attn_v"] = SavedEntry::store(v, attn);
  }

  const auto& oproj = policy.at(LayerRole::OutProj);
  if (oproj.strategy != SaveStrategy::RecomputeIntermediates)
    s["outproj_input"] = SavedEntry::store(att.a, oproj);

  const auto& ffn1 = policy.at(LayerRole::Ffn1);
  if (ffn1.strategy != SaveStrategy::RecomputeIntermediates)
    s["ffn1_input"] = SavedEntry::store(xn2, ffn1);

  const auto& silu = policy.at(LayerRole::SiluMul);
  s["silu_gate"] = SavedEntry::store(gate, silu);
  if (p.gated) s["silu_value"] = SavedEntry::store(value, silu);
  if (silu.strategy != SaveStrategy::RecomputeIntermediates)
    s["silu_sigma"] = SavedEntry::store(sig, silu);

  const auto& ffn2 = policy.at(LayerRole::Ffn2);
  if (ffn2.strategy != SaveStrategy::RecomputeIntermediates)
    s["ffn2_input"] = SavedEntry::store(z, ffn2);

  return out;
}

struct LayerGrads {
  Mat dx;
  Mat dwq, dwk, dwv, dwo, dw_gate, dw_value, dw2;
  Vec dgamma1, dgamma2;
  // Gradients at saved-tensor roles, kept for error measurements.
  Mat dx2, dgate, dvalue, dq, dk, dv;
};

inline LayerGrads layer_backward(const LayerParams& p,
                                 const SavedActivations& saved,
                                 const Mat& upstream,
                                 const ActivationPolicy& policy,
                                 double eps = 1e-6) {
  if (upstream.rows() != p.seq_len || upstream.cols() != p.model_dim)
    throw std::invalid_argument("layer upstream shape mismatch");
  policy.validate();
  const auto& norm = policy.at(LayerRole::RmsNorm);
  const bool norm_cached =
      norm.strategy != SaveStrategy::RecomputeIntermediates;

  // MLP segment.
  const Mat x2 = saved.read("norm2_input");
  Vec r2;
  Mat xn2_re;  // xn2 as seen by the backward pass
  if (norm_cached) {
    r2 = saved.read("norm2_r").transpose();
    xn2_re = Mat(x2.array().rowwise() * p.gamma2.transpose().array());
    for (Eigen::Index i = 0; i < xn2_re.rows(); ++i) xn2_re.row(i) /= r2[i];
  } else {
    xn2_re = detail::rmsnorm_rows(x2, p.gamma2, eps, &r2);
  }
  const Mat gate = saved.read("silu_gate");
  const Mat value = p.gated ? saved.read("silu_value")
                            : Mat::Ones(gate.rows(), gate.cols());
  const Mat sig = policy.at(LayerRole::SiluMul).strategy !=
                          SaveStrategy::RecomputeIntermediates
                      ? saved.read("silu_sigma")
                      : detail::sigmoid_mat(gate);
  const Mat z = policy.at(LayerRole::Ffn2).strategy !=
                        SaveStrategy::RecomputeIntermediates
                    ? saved.read("ffn2_input")
                    : Mat(value.cwiseProduct(gate).cwiseProduct(sig));
  const Mat xn2 = policy.at(LayerRole::Ffn1).strategy !=
                          SaveStrategy::RecomputeIntermediates
                      ? saved.read("ffn1_input")
                      : xn2_re;

  LayerGrads g;
  const Mat dz = upstream * p.w2.transpose();
  g.dw2 = z.transpose() * upstream;
  // z = value .* gate .* sigmoid(gate)
  g.dvalue = dz.cwiseProduct(gate.cwiseProduct(sig));
  const Mat ones = Mat::Ones(gate.rows(), gate.cols());
  g.dgate = dz.cwiseProduct(value)
                .cwiseProduct(sig)
                .cwiseProduct(ones + gate.cwiseProduct(ones - sig));
  Mat dxn2 = g.dgate * p.w_gate.transpose();
  g.dw_gate = xn2.transpose() * g.dgate;
  if (p.gated) {
    dxn2 += g.dvalue * p.w_value.transpose();
    g.dw_value = xn2.transpose() * g.dvalue;
  } else {
    g.dw_value = Mat::Zero(p.model_dim, p.hidden_dim());
  }
  g.dx2 = detail::rmsnorm_rows_backward(x2, p.gamma2, r2, dxn2, &g.dgamma2);
  if (p.residual) g.dx2 += upstream;

  // Attention segment.
  const Mat x1 = saved.read("norm1_input");
  Vec r1;
  Mat xn_re;
  if (norm_cached) {
    r1 = saved.read("norm1_r").transpose();
    xn_re = Mat(x1.array().rowwise() * p.gamma1.transpose().array());
    for (Eigen::Index i = 0; i < xn_re.rows(); ++i) xn_re.row(i) /= r1[i];
  } else {
    xn_re = detail::rmsnorm_rows(x1, p.gamma1, eps, &r1);
  }
  const bool attn_saved = policy.at(LayerRole::Attention).strategy !=
                          SaveStrategy::RecomputeIntermediates;
  const Mat q = attn_saved ? saved.read("attn_q") : Mat(xn_re * p.wq);
  const Mat k = attn_saved ? saved.read("attn_k") : Mat(xn_re * p.wk);
  const Mat v = attn_saved ? saved.read("attn_v") : Mat(xn_re * p.wv);
  const Mat a = policy.at(LayerRole::OutProj).strategy !=
                        SaveStrategy::RecomputeIntermediates
                    ? saved.read("outproj_input")
                    : attention_forward(q, k, v).a;
  const Mat xn = policy.at(LayerRole::QkvProj).strategy !=
                         SaveStrategy::RecomputeIntermediates
                     ? saved.read("qkv_input")
                     : xn_re;

  const Mat d_out = g.dx2;  // x2 = a wo (plus residual handled above)
  const Mat da = d_out * p.wo.transpose();
  g.dwo = a.transpose() * d_out;
  const AttentionGrads ag = attention_grads(q, k, v, da);
  g.dq = ag.dq;
  g.dk = ag.dk;
  g.dv = ag.dv;
  Mat dxn = ag.dq * p.wq.transpose() + ag.dk * p.wk.transpose() +
            ag.dv * p.wv.transpose();
  g.dwq = xn.transpose() * ag.dq;
  g.dwk = xn.transpose() * ag.dk;
  g.dwv = xn.transpose() * ag.dv;
  g.dx = detail::rmsnorm_rows_backward(x1, p.gamma1, r1, dxn, &g.dgamma1);
  if (p.residual) g.dx += g.dx2;  // x2 = o + x
  return g;
}

struct RoleError {
  double mae = 0.0;
  double normalized_l2 = 0.0;
};

inline RoleError role_error(const Mat& got, const Mat& ref) {
  RoleError e;
  e.mae = (got - ref).cwiseAbs().mean();
  const double rn = ref.norm();
  e.normalized_l2 = rn == 0.0 ? 0.0 : (got - ref).norm() / rn;
  return e;
}

// Per-role gradient deviation of a policy-saved backward against the
// full-precision saved backward on the same instance.
inline std::map<std::string, RoleError> measure_layer_gradient_error(
    const LayerParams& p, const Mat& x, const ActivationPolicy& policy,
    std::uint64_t seed) {
  Rng rng = make_rng(seed, 0xBACC);
  const Mat upstream = random_matrix(p.seq_len, p.model_dim, rng);
  const auto full = layer_forward(p, x, ActivationPolicy::all_full());
  const auto quant = layer_forward(p, x, policy);
  const LayerGrads ref =
      layer_backward(p, full.saved, upstream, ActivationPolicy::all_full());
  const LayerGrads got = layer_backward(p, quant.saved, upstream, policy);

  std::map<std::string, RoleError> out;
  out["rmsnorm1_input"] = role_error(got.dx, ref.dx);
  out["rmsnorm2_input"] = role_error(got.dx2, ref.dx2);
  out["gemm_weight"] = role_error(got.dw2, ref.dw2);
  out["silu_gate"] = role_error(got.dgate, ref.dgate);
  out["silu_value"] = role_error(got.dvalue, ref.dvalue);
  out["attention_q"] = role_error(got.dq, ref.dq);
  out["attention_k"] = role_error(got.dk, ref.dk);
  out["attention_v"] = role_error(got.dv, ref.dv);
  return out;
}

}  // namespace agq
