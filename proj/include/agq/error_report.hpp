#pragma once

#include <cmath>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace agq {

// One measured (layer, case, perturbation level) cell: the empirical gradient
// error, the evaluated theoretical bound, and their ratio.
struct ErrorReport {
  std::string layer;   // e.g. "rmsnorm", "silu_mul/dzdx", "attention/dQ"
  int case_id = 1;     // 1 = recompute, 2 = cache
  int size = 0;        // d for vector ops, L for attention
  double epsilon_q = 0.0;
  int trial = 0;
  double empirical = 0.0;
  double bound = 0.0;
  double ratio = 0.0;  // empirical / bound; 0 when both are 0

  void finalize() {
    ratio = bound > 0.0 ? empirical / bound : (empirical == 0.0 ? 0.0 : HUGE_VAL);
    if (!std::isfinite(empirical) || !std::isfinite(bound) ||
        !std::isfinite(ratio))
      throw std::runtime_error("error report has non-finite fields (" + layer +
                               ")");
  }
};

inline void write_reports_csv(const std::vector<ErrorReport>& reports,
                              std::ostream& os) {
  os << "layer,case,size,epsilon_q,trial,empirical,bound,ratio\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.17g,%d,%.17g,%.17g,%.17g\n",
                  r.layer.c_str(), r.case_id, r.size, r.epsilon_q, r.trial,
                  r.empirical, r.bound, r.ratio);
    os << buf;
  }
}

inline nlohmann::json reports_to_json(const std::vector<ErrorReport>& reports) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) {
    arr.push_back({{"layer", r.layer},
                   {"case", r.case_id},
                   {"size", r.size},
                   {"epsilon_q", r.epsilon_q},
                   {"trial", r.trial},
                   {"empirical", r.empirical},
                   {"bound", r.bound},
                   {"ratio", r.ratio}});
  }
  return arr;
}

}  // namespace agq
