#pragma once

#include <string>
#include <vector>

#include "tra/attention.hpp"

namespace tra {

// One s*s matrix -> CSV. Values are printed with enough digits to round-trip
// float exactly.
void write_matrix_csv(const std::string& path, const std::vector<float>& m, int s);
std::vector<float> read_matrix_csv(const std::string& path, int* s_out = nullptr);

// Binary 8-bit PGM. Exact zeros map to gray 0 (the null colour); everything
// else lands in 1..255 after min/max scaling of the nonzero range.
void write_matrix_pgm(const std::string& path, const std::vector<float>& m, int s);

// Dumps S/M/Dbar/A per head under dir as layer<L>_head<H>_<name>.{csv,pgm}.
void export_trace(const std::string& dir, const std::vector<AttentionTrace>& layers);

}  // namespace tra
