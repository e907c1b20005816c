#include "tra/oracles.hpp"

#include <cmath>

#include <json.hpp>

namespace tra {

NaiveTraResult naive_tra(const std::vector<double>& q, const std::vector<double>& k,
                         const std::vector<double>& v, const std::vector<double>& log_forget,
                         int b, int h, int s, int d) {
  const std::size_t need = static_cast<std::size_t>(b) * h * s * d;
  if (q.size() != need || k.size() != need || v.size() != need)
    throw ConfigError("naive_tra: bad q/k/v size");
  if (log_forget.size() != static_cast<std::size_t>(b) * h * s)
    throw ConfigError("naive_tra: bad log_forget size");

  NaiveTraResult r;
  r.b = b;
  r.h = h;
  r.s = s;
  r.d = d;
  const std::size_t ss = static_cast<std::size_t>(s) * s;
  r.S_thresh.assign(static_cast<std::size_t>(b) * h * ss, 0.0);
  r.M.assign(static_cast<std::size_t>(b) * h * ss, 0);
  r.Dbar.assign(static_cast<std::size_t>(b) * h * ss, 0);
  r.A.assign(static_cast<std::size_t>(b) * h * ss, 0.0);
  r.out.assign(need, 0.0);

  for (int bi = 0; bi < b; ++bi) {
    for (int hi = 0; hi < h; ++hi) {
      const std::size_t bh = static_cast<std::size_t>(bi) * h + hi;
      for (int i = 0; i < s; ++i) {
        const std::size_t row = bh * ss + static_cast<std::size_t>(i) * s;
        // thresholded scores and the survival mask
        for (int j = 0; j <= i; ++j) {
          double dot = 0.0;
          for (int t = 0; t < d; ++t)
            dot += q[(bh * s + i) * d + t] * k[(bh * s + j) * d + t];
          dot /= std::sqrt(static_cast<double>(d));
          if (dot > 0.0) {
            r.M[row + j] = 1;
            r.S_thresh[row + j] = dot;
          }
        }
        // counting distances over survivors to the right of each column
        for (int j = 0; j < s; ++j) {
          int c = 0;
          for (int t = j; t < s; ++t) c += r.M[row + t];
          r.Dbar[row + j] = c;
        }
        // explicit delta^Dbar weights renormalised over survivors
        const double delta = std::exp(log_forget[bh * s + i]);
        double z = 0.0;
        for (int j = 0; j <= i; ++j)
          if (r.M[row + j])
            z += std::exp(r.S_thresh[row + j]) * std::pow(delta, r.Dbar[row + j]);
        if (z > 0.0) {
          for (int j = 0; j <= i; ++j)
            if (r.M[row + j])
              r.A[row + j] =
                  std::exp(r.S_thresh[row + j]) * std::pow(delta, r.Dbar[row + j]) / z;
        }
        for (int j = 0; j < s; ++j)
          for (int t = 0; t < d; ++t)
            r.out[(bh * s + i) * d + t] += r.A[row + j] * v[(bh * s + j) * d + t];
      }
    }
  }
  return r;
}

std::vector<int> count_dbar(const std::vector<uint8_t>& mask, int s) {
  if (mask.size() != static_cast<std::size_t>(s) * s) throw ConfigError("count_dbar: bad mask");
  std::vector<int> out(mask.size(), 0);
  for (int i = 0; i < s; ++i)
    for (int j = 0; j < s; ++j) {
      int c = 0;
      for (int t = j; t < s; ++t) c += mask[static_cast<std::size_t>(i) * s + t];
      out[static_cast<std::size_t>(i) * s + j] = c;
    }
  return out;
}

double central_diff(const std::function<double()>& fn, double* coord, double eps) {
  const double orig = *coord;
  *coord = orig + eps;
  const double fp = fn();
  *coord = orig - eps;
  const double fm = fn();
  *coord = orig;
  return (fp - fm) / (2.0 * eps);
}

std::vector<int> solve_flipflop(const std::vector<int>& tokens) {
  const Vocab v = Vocab::flipflop();
  const int W = v.at("w"), R = v.at("r");
  std::vector<int> pred(tokens.size(), -1);
  int last_write_bit_token = -1;
  for (std::size_t t = 1; t < tokens.size(); t += 2) {
    const int instr = tokens[t];
    if (instr == R && t + 1 < tokens.size()) pred[t + 1] = last_write_bit_token;
    if (instr == W && t + 1 < tokens.size()) last_write_bit_token = tokens[t + 1];
  }
  return pred;
}

std::vector<int> solve_induction(const std::vector<int>& tokens) {
  std::vector<int> pred(tokens.size(), -1);
  if (tokens.size() < 4) return pred;
  const int query = tokens[tokens.size() - 2];
  // first prior occurrence of the query symbol; answer is its successor
  for (std::size_t t = 1; t + 2 < tokens.size(); ++t)
    if (tokens[t] == query) {
      pred.back() = tokens[t + 1];
      break;
    }
  return pred;
}

std::vector<int> solve_copy(const std::vector<int>& tokens) {
  const Vocab v = Vocab::copy();
  const int SEP = v.at("SEP");
  std::vector<int> pred(tokens.size(), -1);
  std::size_t sep = 0;
  for (std::size_t t = 0; t < tokens.size(); ++t)
    if (tokens[t] == SEP) {
      sep = t;
      break;
    }
  if (sep == 0) return pred;
  // Match the entire emitted prefix against the source rather than the last
  // token alone: repeated substrings (e.g. "aabaa") make any shorter match
  // ambiguous. Under teacher forcing the emitted prefix equals the source
  // prefix, and its unique full-length anchor is the source start.
  const std::size_t src_len = sep - 1;
  for (std::size_t t = sep + 1; t < tokens.size(); ++t) {
    const std::size_t emitted = t - sep - 1;  // tokens already copied
    bool prefix_ok = emitted <= src_len;
    for (std::size_t u = 0; prefix_ok && u < emitted; ++u)
      if (tokens[sep + 1 + u] != tokens[1 + u]) prefix_ok = false;
    if (prefix_ok && emitted < src_len) pred[t] = tokens[1 + emitted];
  }
  return pred;
}

std::vector<int> solve_flipflop_pp(const std::vector<int>& tokens) {
  const Vocab v = Vocab::flipflop_pp(kFfppAlphabet);
  const int TRIG = v.at("TRIGGER"), SEP = v.at("SEP");
  std::vector<int> pred(tokens.size(), -1);
  if (tokens.size() < 5) return pred;
  const int instr = tokens[1];
  int first = -1, last = -1, sep = -1;
  for (std::size_t t = 2; t < tokens.size(); ++t) {
    if (tokens[t] == SEP) {
      sep = static_cast<int>(t);
      break;
    }
    if (tokens[t] == TRIG) {
      if (first < 0) first = static_cast<int>(t);
      last = static_cast<int>(t);
    }
  }
  if (sep < 0 || first < 0) return pred;
  int pos = -1;
  if (instr == v.at("AFTER_FIRST")) pos = first + 1;
  else if (instr == v.at("AFTER_LAST")) pos = last + 1;
  else if (instr == v.at("BEFORE_FIRST")) pos = first - 1;
  else if (instr == v.at("BEFORE_LAST")) pos = last - 1;
  if (pos >= 2 && pos < sep) pred[sep + 1] = tokens[pos];
  return pred;
}

std::vector<int> solve(Task t, const std::vector<int>& tokens) {
  switch (t) {
    case Task::FLIPFLOP: return solve_flipflop(tokens);
    case Task::INDUCTION: return solve_induction(tokens);
    case Task::COPY: return solve_copy(tokens);
    case Task::FLIPFLOP_PP: return solve_flipflop_pp(tokens);
  }
  throw ConfigError("bad task");
}

std::string OracleReport::to_json() const {
  nlohmann::json j = {{"task", task},
                      {"cases", cases},
                      {"failures", failures},
                      {"ok", ok()},
                      {"details", details}};
  return j.dump(2);
}

OracleReport validate_samples(Task t, const std::vector<TaskSample>& samples) {
  OracleReport rep;
  rep.task = task_name(t);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const TaskSample& s = samples[i];
    ++rep.cases;
    std::string err;
    if (s.answer_mask.size() != s.tokens.size()) {
      err = "mask length mismatch";
    } else {
      bool any = false;
      for (std::size_t u = 0; u < s.tokens.size(); ++u)
        if (s.answer_mask[u]) {
          any = true;
          if (u == 0) err = "BOS cannot be scored";
        }
      if (!any) err = "no scored positions";
    }
    if (err.empty()) {
      const std::vector<int> pred = solve(t, s.tokens);
      for (std::size_t u = 0; u < s.tokens.size(); ++u) {
        if (!s.answer_mask[u]) continue;
        if (pred[u] != s.tokens[u]) {
          err = "oracle disagrees at position " + std::to_string(u) + " (oracle " +
                std::to_string(pred[u]) + ", sample " + std::to_string(s.tokens[u]) + ")";
          break;
        }
      }
    }
    if (!err.empty()) {
      ++rep.failures;
      if (rep.details.size() < 10)
        rep.details.push_back("sample " + std::to_string(i) + ": " + err);
    }
  }
  return rep;
}

}  // namespace tra
