#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tra/tasks.hpp"

// Independent reference implementations used only by tests and the validate /
// gradcheck commands. Deliberately plain double-precision loops sharing no
// code with the production kernels.

namespace tra {

// Explicit-exponentiation threshold relative attention on raw arrays.
// Inputs are post-norm per-head tensors [b,h,s,d] and per-row log-forget
// values [b,h,s]. Weights delta_i^Dbar are formed by literal pow() and
// renormalised over the surviving keys.
struct NaiveTraResult {
  int b = 0, h = 0, s = 0, d = 0;
  std::vector<double> S_thresh;  // [b,h,s,s] content term after threshold
  std::vector<uint8_t> M;        // survival mask incl. causality
  std::vector<int> Dbar;         // contextual distances (counting definition)
  std::vector<double> A;         // final weights, zero rows for no survivors
  std::vector<double> out;       // [b,h,s,d]
};

NaiveTraResult naive_tra(const std::vector<double>& q, const std::vector<double>& k,
                         const std::vector<double>& v, const std::vector<double>& log_forget,
                         int b, int h, int s, int d);

// Counting definition of the contextual distance: Dbar[i][j] = number of
// surviving keys at columns j..s-1 of row i.
std::vector<int> count_dbar(const std::vector<uint8_t>& mask, int s);

// Central difference at one coordinate. The point must sit away from any
// threshold kink by more than eps for the estimate to be meaningful.
double central_diff(const std::function<double()>& fn, double* coord, double eps = 1e-3);

// Per-task reference solvers. Given the true token prefix (teacher forcing),
// return the predicted token for every scored position; -1 elsewhere.
std::vector<int> solve_flipflop(const std::vector<int>& tokens);
std::vector<int> solve_induction(const std::vector<int>& tokens);
std::vector<int> solve_copy(const std::vector<int>& tokens);
std::vector<int> solve_flipflop_pp(const std::vector<int>& tokens);

std::vector<int> solve(Task t, const std::vector<int>& tokens);

// Validates that every sample's scored tokens match the solver's output and
// that masks are well-formed. Returns a json-ready summary.
struct OracleReport {
  std::string task;
  std::size_t cases = 0;
  std::size_t failures = 0;
  std::vector<std::string> details;  // first few failure descriptions

  bool ok() const { return failures == 0; }
  std::string to_json() const;
};

OracleReport validate_samples(Task t, const std::vector<TaskSample>& samples);

}  // namespace tra
