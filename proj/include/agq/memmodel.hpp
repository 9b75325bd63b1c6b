#pragma once

#include <array>
#include <map>
#include <sstream>
#include <string>

#include "agq/dbca.hpp"
#include "agq/layers.hpp"
#include "json.hpp"

namespace agq {

// Analytic activation-memory accounting in U, where
// 1U = batch * sequence length * hidden size * 2 bytes.
enum class Scheme { MegatronBf16, Coat, Agoq };

inline const char* scheme_name(Scheme s) {
  switch (s) {
    case Scheme::MegatronBf16: return "megatron_bf16";
    case Scheme::Coat: return "coat";
    case Scheme::Agoq: return "agoq";
  }
  return "?";
}

inline constexpr std::array<const char*, 7> kSchemeOps = {
    "QKV", "Attention", "Linear", "RMSNorm", "FFN1", "ActFunc", "FFN2"};

struct SchemeTable {
  Scheme scheme = Scheme::MegatronBf16;
  std::array<double, 7> per_op{};
  double total = 0.0;
};

inline SchemeTable scheme_table(Scheme s) {
  SchemeTable t;
  t.scheme = s;
  switch (s) {
    case Scheme::MegatronBf16:
      t.per_op = {1.0, 5.0, 1.0, 4.0, 1.0, 12.0, 4.0};
      break;
    case Scheme::Coat:
      t.per_op = {1.0, 5.0, 1.0, 1.0, 0.5, 6.0, 2.0};
      break;
    case Scheme::Agoq:
      t.per_op = {0.0, 5.0, 0.25, 0.5, 0.0, 2.0, 0.0};
      break;
  }
  for (double u : t.per_op) t.total += u;
  return t;
}

struct LayerDims {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t hidden = 1;
};

inline double unit_bytes(const LayerDims& d) {
  return static_cast<double>(d.batch) * d.seq_len * d.hidden * 2.0;
}

inline double layer_bytes(const LayerDims& dims, Scheme scheme,
                          int n_layers = 1) {
  if (n_layers < 0) throw std::invalid_argument("n_layers must be >= 0");
  return scheme_table(scheme).total * unit_bytes(dims) * n_layers;
}

// Byte-level accounting of a SavedActivations set: quantized codes at
// bit_width bits per element, 4-byte scales per block, and full-precision
// tensors at 2 bytes per element (the BF16-equivalent storage the U model
// assumes). Scales are reported separately; the U model ignores them.
struct RoleBytes {
  double code_bytes = 0.0;
  double scale_bytes = 0.0;
  double full_bytes = 0.0;

  double total() const { return code_bytes + scale_bytes + full_bytes; }
};

struct ByteBreakdown {
  std::map<std::string, RoleBytes> roles;
  RoleBytes totals;
};

inline ByteBreakdown measured_bytes(const SavedActivations& saved) {
  ByteBreakdown out;
  for (const auto& [name, entry] : saved.entries) {
    RoleBytes rb;
    if (entry.is_quantized) {
      rb.code_bytes = static_cast<double>(entry.q.num_elements()) *
                      entry.q.bit_width / 8.0;
      rb.scale_bytes = 4.0 * static_cast<double>(entry.q.num_blocks());
    } else {
      rb.full_bytes = 2.0 * static_cast<double>(entry.full.size());
    }
    out.roles[name] = rb;
    out.totals.code_bytes += rb.code_bytes;
    out.totals.scale_bytes += rb.scale_bytes;
    out.totals.full_bytes += rb.full_bytes;
  }
  return out;
}

// Per-stage activation bytes under a DBCA plan, against a 16-bit reference
// size for one stored mini-batch.
inline std::vector<double> dbca_stage_memory(
    const BitWidthPlan& plan, double bytes_per_minibatch_at_16bit) {
  std::vector<double> out;
  for (const auto& s : plan.stages)
    out.push_back(s.stored_minibatches * s.assigned_bits / 16.0 *
                  bytes_per_minibatch_at_16bit);
  return out;
}

namespace detail {

inline std::string format_u(double u) {
  std::ostringstream os;
  os << u;
  return os.str();
}

}  // namespace detail

inline std::string render_scheme_table_text(const std::vector<Scheme>& schemes) {
  std::ostringstream text;
  text << "Activation memory per operation (U = batch x seq x hidden x 2 bytes)\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-14s %9s %9s %9s %9s %9s %9s %9s %9s\n",
                "scheme", "QKV", "Attention", "Linear", "RMSNorm", "FFN1",
                "ActFunc", "FFN2", "Total");
  text << line;
  for (Scheme s : schemes) {
    const auto t = scheme_table(s);
    std::snprintf(line, sizeof(line),
                  "%-14s %9s %9s %9s %9s %9s %9s %9s %9s\n", scheme_name(s),
                  detail::format_u(t.per_op[0]).c_str(),
                  detail::format_u(t.per_op[1]).c_str(),
                  detail::format_u(t.per_op[2]).c_str(),
                  detail::format_u(t.per_op[3]).c_str(),
                  detail::format_u(t.per_op[4]).c_str(),
                  detail::format_u(t.per_op[5]).c_str(),
                  detail::format_u(t.per_op[6]).c_str(),
                  detail::format_u(t.total).c_str());
    text << line;
  }
  return text.str();
}

inline std::string render_scheme_table_csv(const std::vector<Scheme>& schemes) {
  std::ostringstream os;
  os << "scheme";
  for (const char* op : kSchemeOps) os << "," << op;
  os << ",Total\n";
  for (Scheme s : schemes) {
    const auto t = scheme_table(s);
    os << scheme_name(s);
    for (double u : t.per_op) os << "," << detail::format_u(u);
    os << "," << detail::format_u(t.total) << "\n";
  }
  return os.str();
}

inline nlohmann::json scheme_table_json(const std::vector<Scheme>& schemes) {
  nlohmann::json arr = nlohmann::json::array();
  for (Scheme s : schemes) {
    const auto t = scheme_table(s);
    nlohmann::json j;
    j["scheme"] = scheme_name(s);
    for (std::size_t i = 0; i < kSchemeOps.size(); ++i)
      j[kSchemeOps[i]] = t.per_op[i];
    j["Total"] = t.total;
    arr.push_back(j);
  }
  return arr;
}

}  // namespace agq
