#include "tra/trace_export.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tra/common.hpp"

namespace tra {

void write_matrix_csv(const std::string& path, const std::vector<float>& m, int s) {
  if (m.size() != static_cast<std::size_t>(s) * s)
    throw ConfigError("matrix size does not match s=" + std::to_string(s));
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  char buf[32];
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      // %.9g round-trips binary32
      std::snprintf(buf, sizeof buf, "%.9g", m[static_cast<std::size_t>(i) * s + j]);
      f << buf << (j + 1 == s ? '\n' : ',');
    }
  }
  if (!f) throw IoError("short write on " + path);
}

std::vector<float> read_matrix_csv(const std::string& path, int* s_out) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  std::vector<float> out;
  std::string line;
  int s = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    int cols = 0;
    while (std::getline(ss, cell, ',')) {
      out.push_back(std::strtof(cell.c_str(), nullptr));
      ++cols;
    }
    if (s == 0)
      s = cols;
    else if (cols != s)
      throw IoError("ragged CSV " + path);
  }
  if (s == 0 || out.size() != static_cast<std::size_t>(s) * s)
    throw IoError("CSV is not square: " + path);
  if (s_out) *s_out = s;
  return out;
}

void write_matrix_pgm(const std::string& path, const std::vector<float>& m, int s) {
  if (m.size() != static_cast<std::size_t>(s) * s)
    throw ConfigError("matrix size does not match s=" + std::to_string(s));
  float lo = 0.f, hi = 0.f;
  bool any = false;
  for (float v : m) {
    if (v == 0.f) continue;
    if (!any) {
      lo = hi = v;
      any = true;
    } else {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const float span = hi > lo ? hi - lo : 1.f;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P5\n" << s << " " << s << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      const float v = m[static_cast<std::size_t>(i) * s + j];
      if (v == 0.f) {
        row[j] = 0;  // null colour: entries that are exactly zero
      } else {
        const float t = (v - lo) / span;
        row[j] = static_cast<unsigned char>(1 + std::lround(t * 254.f));
      }
    }
    f.write(reinterpret_cast<const char*>(row.data()), s);
  }
  if (!f) throw IoError("short write on " + path);
}

void export_trace(const std::string& dir, const std::vector<AttentionTrace>& layers) {
  std::filesystem::create_directories(dir);
  const struct {
    const char* name;
    std::vector<std::vector<float>> AttentionTrace::* field;
  } parts[] = {{"S", &AttentionTrace::S},
               {"M", &AttentionTrace::M},
               {"Dbar", &AttentionTrace::Dbar},
               {"A", &AttentionTrace::A}};
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const AttentionTrace& tr = layers[li];
    for (int h = 0; h < tr.n_heads; ++h) {
      for (const auto& part : parts) {
        const std::vector<float>& mat = (tr.*(part.field))[h];
        const std::string stem =
            dir + "/layer" + std::to_string(li) + "_head" + std::to_string(h) + "_" + part.name;
        write_matrix_csv(stem + ".csv", mat, tr.s);
        write_matrix_pgm(stem + ".pgm", mat, tr.s);
      }
    }
  }
}

}  // namespace tra
