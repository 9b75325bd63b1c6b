#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "agq/layers.hpp"
#include "json.hpp"

namespace agq {

struct PipelineConfig {
  int n_stages = 1;
  int micro_batches = 8;
  int interleave = 2;  // model chunks per device

  void check() const {
    if (n_stages < 1) throw std::invalid_argument("n_stages must be >= 1");
    if (micro_batches < 1)
      throw std::invalid_argument("micro_batches must be >= 1");
    if (interleave != 2)
      throw std::invalid_argument(
          "stored-activation counts are modeled for interleave factor 2");
    if (n_stages > 1 && micro_batches < 2 * n_stages)
      throw std::invalid_argument(
          "steady-state counts need micro_batches >= 2 * n_stages");
  }
};

// Peak stored activation mini-batches per device, device 1 first. Device 1
// holds the most; with n stages the counts are 3n-1, 3n-3, ..., n+1. A
// single stage degenerates to one in-flight activation set.
inline std::vector<int> stored_activation_counts(const PipelineConfig& cfg) {
  cfg.check();
  if (cfg.n_stages == 1) return {1};
  std::vector<int> counts(cfg.n_stages);
  for (int d = 1; d <= cfg.n_stages; ++d)
    counts[d - 1] = 3 * cfg.n_stages - 2 * d + 1;
  return counts;
}

struct StagePlan {
  int stage_index = 0;  // device number, 1-based
  int stored_minibatches = 0;
  double raw_bits = 4.0;
  int assigned_bits = 4;
};

struct BitWidthPlan {
  int n_stages = 1;
  std::vector<StagePlan> stages;

  std::vector<int> assigned() const {
    std::vector<int> out;
    for (const auto& s : stages) out.push_back(s.assigned_bits);
    return out;
  }
};

// B_i = 4 N_max / N_i, rounded to nearest and clamped to [4, 8]. The most
// loaded stage lands exactly on 4 bits.
inline BitWidthPlan plan_bit_widths(const PipelineConfig& cfg) {
  const auto counts = stored_activation_counts(cfg);
  const int n_max = counts.front();
  BitWidthPlan plan;
  plan.n_stages = cfg.n_stages;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    StagePlan s;
    s.stage_index = static_cast<int>(i) + 1;
    s.stored_minibatches = counts[i];
    s.raw_bits = 4.0 * n_max / counts[i];
    const auto rounded = static_cast<int>(std::lround(s.raw_bits));
    s.assigned_bits = std::max(4, std::min(8, rounded));
    plan.stages.push_back(s);
  }
  return plan;
}

struct StageMemory {
  int stage_index = 0;
  double bytes = 0.0;
  double budget_bytes = 0.0;
};

struct PeakMemoryCheck {
  std::vector<StageMemory> stages;
  double budget_bytes = 0.0;       // N_max * 4/16 * bytes per mini-batch
  double slack_bytes = 0.0;        // rounding allowance, one bit per element
  bool pass = false;
  std::string note;
};

// Per-stage activation memory is N_i * bits/16 * bytes_per_minibatch_at_16bit.
// The verdict compares against the most loaded stage at 4 bits, with a
// rounding allowance of one extra bit per element on the stage being checked
// (the cost of rounding a raw width like 4.89 up to 5).
inline PeakMemoryCheck peak_memory_check(const BitWidthPlan& plan,
                                         double bytes_per_minibatch_at_16bit) {
  if (plan.stages.empty()) throw std::invalid_argument("empty plan");
  const double unit = bytes_per_minibatch_at_16bit / 16.0;
  int n_max = 0;
  for (const auto& s : plan.stages)
    n_max = std::max(n_max, s.stored_minibatches);
  PeakMemoryCheck out;
  out.budget_bytes = n_max * 4.0 * unit;
  out.pass = true;
  double max_slack = 0.0;
  for (const auto& s : plan.stages) {
    StageMemory m;
    m.stage_index = s.stage_index;
    m.bytes = s.stored_minibatches * static_cast<double>(s.assigned_bits) * unit;
    const double slack = s.stored_minibatches * 1.0 * unit;
    m.budget_bytes = out.budget_bytes + slack;
    max_slack = std::max(max_slack, slack);
    if (m.bytes > m.budget_bytes) out.pass = false;
    out.stages.push_back(m);
  }
  out.slack_bytes = max_slack;
  out.note =
      "budget is the most loaded stage at 4 bits, plus a rounding "
      "allowance of one bit per element on the stage under test";
  return out;
}

struct PlanReuseCheck {
  std::vector<int> applied_bits;  // per device of the larger pipeline
  double peak = 0.0;              // max N_i * bits_i
  double uniform4_peak = 0.0;     // max N_i * 4
  bool pass = false;
};

// Applies a smaller pipeline's bit assignment to a larger one. Assignments
// are anchored at the lightly loaded end of the pipeline (where the extra
// bits live); the additional, more loaded stages of the larger setup get 4
// bits. Peak memory must not exceed the larger setup's uniform 4-bit peak,
// with the same one-bit-per-element rounding allowance the peak check uses
// (reusing a plan onto itself keeps its rounded-up stages).
inline PlanReuseCheck plan_reuse_check(const PipelineConfig& low,
                                       const PipelineConfig& high) {
  if (low.n_stages > high.n_stages)
    throw std::invalid_argument(
        "plan reuse goes from fewer stages to more stages");
  const BitWidthPlan low_plan = plan_bit_widths(low);
  const auto high_counts = stored_activation_counts(high);
  PlanReuseCheck out;
  out.applied_bits.assign(high_counts.size(), 4);
  // Device n of the low config maps to device n' of the high config, etc.
  for (int i = 0; i < low.n_stages; ++i) {
    const int from = low.n_stages - 1 - i;
    const int to = static_cast<int>(high_counts.size()) - 1 - i;
    out.applied_bits[to] = low_plan.stages[from].assigned_bits;
  }
  out.pass = true;
  for (std::size_t i = 0; i < high_counts.size(); ++i) {
    const double bits_product =
        static_cast<double>(high_counts[i]) * out.applied_bits[i];
    out.peak = std::max(out.peak, bits_product);
    out.uniform4_peak =
        std::max(out.uniform4_peak, static_cast<double>(high_counts[i]) * 4.0);
  }
  for (std::size_t i = 0; i < high_counts.size(); ++i) {
    const double bits_product =
        static_cast<double>(high_counts[i]) * out.applied_bits[i];
    if (bits_product > out.uniform4_peak + high_counts[i]) out.pass = false;
  }
  return out;
}

// Thin adapter: a stage's planned width as an activation policy for the toy
// layer (non-attention roles only).
inline ActivationPolicy stage_policy(const BitWidthPlan& plan, int stage_index) {
  for (const auto& s : plan.stages)
    if (s.stage_index == stage_index)
      return ActivationPolicy::agoq_default(s.assigned_bits);
  throw std::invalid_argument("no such stage in plan");
}

inline nlohmann::json plan_to_json(const BitWidthPlan& plan,
                                   const PeakMemoryCheck& check) {
  nlohmann::json j;
  j["n_stages"] = plan.n_stages;
  auto counts = nlohmann::json::array();
  auto raw = nlohmann::json::array();
  auto assigned = nlohmann::json::array();
  for (const auto& s : plan.stages) {
    counts.push_back(s.stored_minibatches);
    raw.push_back(s.raw_bits);
    assigned.push_back(s.assigned_bits);
  }
  j["counts"] = counts;
  j["raw_bits"] = raw;
  j["assigned_bits"] = assigned;
  nlohmann::json pc;
  pc["pass"] = check.pass;
  pc["budget_bytes"] = check.budget_bytes;
  pc["slack_bytes"] = check.slack_bytes;
  pc["note"] = check.note;
  auto stages = nlohmann::json::array();
  for (const auto& m : check.stages)
    stages.push_back({{"stage", m.stage_index},
                      {"bytes", m.bytes},
                      {"budget_bytes", m.budget_bytes}});
  pc["stages"] = stages;
  j["peak_check"] = pc;
  return j;
}

}  // namespace agq
