#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "tra/model.hpp"

namespace tra {

struct GradCheckReport {
  std::string name;          // variant or op
  uint64_t data_seed = 0;    // seed in force after kink resampling
  int resamples = 0;
  int coords = 0;
  double max_rel_err = 0.0;
  std::string worst_param;
  bool ok = false;

  nlohmann::json to_json() const;
};

// Central finite differences in 64-bit on a micro model (2 layers, 1 head,
// embed 8, vocab 11, seq 6), training-mode forward. Inputs are resampled
// until every causal raw score sits at least kink_margin away from the
// threshold, so the difference quotient never straddles the ReLU corner.
GradCheckReport gradcheck_model(Variant v, uint64_t seed, int coords_per_param = 6,
                                double tol = 1e-3, double kink_margin = 1e-2);

// Same FD machinery pointed at each primitive op in isolation.
std::vector<GradCheckReport> gradcheck_ops(uint64_t seed, double tol = 1e-3);

}  // namespace tra
