#include "tra/tasks.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace tra {

const char* task_name(Task t) {
  switch (t) {
    case Task::FLIPFLOP: return "flipflop";
    case Task::INDUCTION: return "induct";
    case Task::COPY: return "copy";
    case Task::FLIPFLOP_PP: return "flipflop_pp";
  }
  return "?";
}

Task task_from(const std::string& s) {
  for (Task t : {Task::FLIPFLOP, Task::INDUCTION, Task::COPY, Task::FLIPFLOP_PP})
    if (s == task_name(t)) return t;
  if (s == "induction") return Task::INDUCTION;
  if (s == "ffpp") return Task::FLIPFLOP_PP;
  throw ConfigError("unknown task '" + s + "'");
}

int Vocab::at(const std::string& name) const {
  auto it = ids.find(name);
  if (it == ids.end()) throw ConfigError("vocab has no token '" + name + "'");
  return it->second;
}

Vocab Vocab::flipflop() {
  Vocab v;
  v.ids = {{"BOS", 0}, {"w", 1}, {"i", 2}, {"r", 3}, {"b0", 4}, {"b1", 5}};
  v.size = 6;
  return v;
}

Vocab Vocab::induction(int alphabet) {
  Vocab v;
  v.ids["BOS"] = 0;
  for (int i = 0; i < alphabet; ++i) v.ids["s" + std::to_string(i)] = 1 + i;
  v.size = 1 + alphabet;
  return v;
}

Vocab Vocab::copy() {
  Vocab v;
  v.ids["BOS"] = 0;
  v.ids["SEP"] = 1;
  for (int i = 0; i < 10; ++i) v.ids["s" + std::to_string(i)] = 2 + i;
  v.size = 12;
  return v;
}

Vocab Vocab::flipflop_pp(int alphabet) {
  Vocab v;
  v.ids = {{"BOS", 0},         {"SEP", 1},         {"AFTER_FIRST", 2}, {"AFTER_LAST", 3},
           {"BEFORE_FIRST", 4}, {"BEFORE_LAST", 5}, {"TRIGGER", 6}};
  for (int i = 0; i < alphabet; ++i) v.ids["s" + std::to_string(i)] = 7 + i;
  v.size = 7 + alphabet;
  return v;
}

Vocab task_vocab(Task t) {
  switch (t) {
    case Task::FLIPFLOP: return Vocab::flipflop();
    case Task::INDUCTION: return Vocab::induction(kInductAlphabet);
    case Task::COPY: return Vocab::copy();
    case Task::FLIPFLOP_PP: return Vocab::flipflop_pp(kFfppAlphabet);
  }
  throw ConfigError("bad task");
}

std::vector<TaskSample> gen_flipflop(int n, int seq_len, double p_ignore, Rng& rng,
                                     const std::string& bucket) {
  if (seq_len < 4 || seq_len % 2 != 0)
    throw ConfigError("flipflop seq_len must be even and >= 4");
  if (!(p_ignore > 0.0 && p_ignore < 1.0)) throw ConfigError("p_ignore must be in (0,1)");
  const Vocab v = Vocab::flipflop();
  const int W = v.at("w"), I = v.at("i"), R = v.at("r");
  const int B0 = v.at("b0");
  const int pairs = seq_len / 2;

  std::vector<TaskSample> out;
  out.reserve(n);
  for (int si = 0; si < n; ++si) {
    TaskSample s;
    s.tokens.reserve(1 + seq_len);
    s.tokens.push_back(v.at("BOS"));
    s.bucket = bucket;
    int last_write_bit = 0;
    for (int p = 0; p < pairs; ++p) {
      int instr;
      if (p == 0)
        instr = W;  // every read has an antecedent
      else if (p == pairs - 1)
        instr = R;  // sequences end on a read so every sample is scored
      else if (rng.next_double() < p_ignore)
        instr = I;
      else
        instr = rng.next_below(2) == 0 ? W : R;
      s.tokens.push_back(instr);
      int bit;
      if (instr == R)
        bit = last_write_bit;
      else
        bit = static_cast<int>(rng.next_below(2));
      if (instr == W) last_write_bit = bit;
      s.tokens.push_back(B0 + bit);
    }
    s.answer_mask.assign(s.tokens.size(), 0);
    for (std::size_t t = 1; t + 1 < s.tokens.size(); t += 2)
      if (s.tokens[t] == R) s.answer_mask[t + 1] = 1;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TaskSample> gen_induction(int n, int len_lo, int len_hi, Rng& rng) {
  if (len_lo < 2 || len_hi < len_lo) throw ConfigError("induction length range");
  if (len_hi > kInductAlphabet)
    throw ConfigError("induction length " + std::to_string(len_hi) + " exceeds alphabet " +
                      std::to_string(kInductAlphabet));
  const Vocab v = Vocab::induction(kInductAlphabet);
  std::vector<int> pool(kInductAlphabet);
  std::vector<TaskSample> out;
  out.reserve(n);
  for (int si = 0; si < n; ++si) {
    const int L = rng.next_int(len_lo, len_hi);
    for (int i = 0; i < kInductAlphabet; ++i) pool[i] = i;
    // partial Fisher-Yates gives L distinct symbols
    for (int i = 0; i < L; ++i)
      std::swap(pool[i], pool[i + static_cast<int>(rng.next_below(kInductAlphabet - i))]);
    const int q = rng.next_int(1, L - 1);  // 1-based position of the repeated query
    TaskSample s;
    s.tokens.reserve(L + 3);
    s.tokens.push_back(v.at("BOS"));
    for (int i = 0; i < L; ++i) s.tokens.push_back(1 + pool[i]);
    s.tokens.push_back(1 + pool[q - 1]);
    s.tokens.push_back(1 + pool[q]);
    s.answer_mask.assign(s.tokens.size(), 0);
    s.answer_mask.back() = 1;
    s.bucket = std::to_string(L);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TaskSample> gen_copy(int n, int len_lo, int len_hi, Rng& rng) {
  if (len_lo < 1 || len_hi < len_lo) throw ConfigError("copy length range");
  const Vocab v = Vocab::copy();
  std::vector<TaskSample> out;
  out.reserve(n);
  for (int si = 0; si < n; ++si) {
    const int L = rng.next_int(len_lo, len_hi);
    TaskSample s;
    s.tokens.reserve(2 * L + 2);
    s.tokens.push_back(v.at("BOS"));
    for (int i = 0; i < L; ++i) s.tokens.push_back(2 + static_cast<int>(rng.next_below(10)));
    s.tokens.push_back(v.at("SEP"));
    for (int i = 0; i < L; ++i) s.tokens.push_back(s.tokens[1 + i]);
    s.answer_mask.assign(s.tokens.size(), 0);
    for (int i = 0; i < L; ++i) s.answer_mask[L + 2 + i] = 1;
    s.bucket = std::to_string(L);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TaskSample> gen_flipflop_pp(int n, int len_lo, int len_hi, Rng& rng) {
  if (len_lo < 2 || len_hi < len_lo) throw ConfigError("flipflop_pp length range (min 2)");
  const Vocab v = Vocab::flipflop_pp(kFfppAlphabet);
  const int TRIG = v.at("TRIGGER");
  static const char* kInstr[4] = {"AFTER_FIRST", "AFTER_LAST", "BEFORE_FIRST", "BEFORE_LAST"};

  std::vector<TaskSample> out;
  out.reserve(n);
  std::vector<uint8_t> is_trig;
  for (int si = 0; si < n; ++si) {
    const int L = rng.next_int(len_lo, len_hi);
    const int instr_idx = static_cast<int>(rng.next_below(4));
    const std::string instr = kInstr[instr_idx];

    // place triggers; resample until the answer-side neighbour of the
    // relevant trigger exists and is a plain symbol
    int first = -1, last = -1;
    for (;;) {
      is_trig.assign(L, 0);
      int k = 1 + static_cast<int>(rng.next_below(std::max(1, L / 8)));
      for (int placed = 0; placed < k; ++placed) is_trig[rng.next_below(L)] = 1;
      first = last = -1;
      for (int i = 0; i < L; ++i)
        if (is_trig[i]) {
          if (first < 0) first = i;
          last = i;
        }
      bool ok = true;
      if (instr == "AFTER_FIRST") ok = first + 1 < L && !is_trig[first + 1];
      else if (instr == "AFTER_LAST") ok = last + 1 < L;  // next of last is never a trigger
      else if (instr == "BEFORE_FIRST") ok = first > 0;   // prev of first is never a trigger
      else ok = last > 0 && !is_trig[last - 1];
      if (ok) break;
    }

    TaskSample s;
    s.tokens.reserve(L + 4);
    s.tokens.push_back(v.at("BOS"));
    s.tokens.push_back(v.at(instr));
    for (int i = 0; i < L; ++i)
      s.tokens.push_back(is_trig[i] ? TRIG : 7 + static_cast<int>(rng.next_below(kFfppAlphabet)));
    s.tokens.push_back(v.at("SEP"));
    int answer_pos;
    if (instr == "AFTER_FIRST") answer_pos = first + 1;
    else if (instr == "AFTER_LAST") answer_pos = last + 1;
    else if (instr == "BEFORE_FIRST") answer_pos = first - 1;
    else answer_pos = last - 1;
    s.tokens.push_back(s.tokens[2 + answer_pos]);
    s.answer_mask.assign(s.tokens.size(), 0);
    s.answer_mask.back() = 1;
    s.bucket = std::to_string(L);
    s.meta = instr;
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<TaskSample> generate(Task t, int n, int len_lo, int len_hi, double p_ignore,
                                 Rng& rng, const std::string& bucket) {
  switch (t) {
    case Task::FLIPFLOP: return gen_flipflop(n, len_hi, p_ignore, rng, bucket);
    case Task::INDUCTION: return gen_induction(n, len_lo, len_hi, rng);
    case Task::COPY: return gen_copy(n, len_lo, len_hi, rng);
    case Task::FLIPFLOP_PP: return gen_flipflop_pp(n, len_lo, len_hi, rng);
  }
  throw ConfigError("bad task");
}

bool exact_match(const TaskSample& s, const std::vector<int>& predictions) {
  if (predictions.size() != s.tokens.size())
    throw ConfigError("exact_match: prediction length mismatch");
  bool any = false;
  for (std::size_t t = 0; t < s.tokens.size(); ++t) {
    if (!s.answer_mask[t]) continue;
    any = true;
    if (predictions[t] != s.tokens[t]) return false;
  }
  if (!any) throw ConfigError("exact_match: sample has no scored positions");
  return true;
}

namespace {
void write_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  f.write(reinterpret_cast<const char*>(b), 4);
}
uint32_t read_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}
void write_str(std::ofstream& f, const std::string& s) {
  write_u32(f, static_cast<uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_str(std::ifstream& f) {
  std::string s(read_u32(f), '\0');
  f.read(s.data(), static_cast<std::streamsize>(s.size()));
  return s;
}
}  // namespace

void write_corpus(const std::string& path, Task task, const Vocab& vocab,
                  const std::vector<TaskSample>& samples, uint64_t seed,
                  const std::string& params_desc) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write corpus " + path);
  f.write("TRACORP1", 8);
  std::string sidecar = path + ".vocab.json";
  if (auto slash = sidecar.find_last_of('/'); slash != std::string::npos)
    sidecar = sidecar.substr(slash + 1);
  nlohmann::json header = {{"task", task_name(task)},
                           {"vocab", vocab.ids},
                           {"vocab_size", vocab.size},
                           {"vocab_sidecar", sidecar},
                           {"n_samples", samples.size()},
                           {"seed", seed},
                           {"params", params_desc}};
  write_str(f, header.dump());
  for (const auto& s : samples) {
    write_u32(f, static_cast<uint32_t>(s.tokens.size()));
    for (int t : s.tokens) write_u32(f, static_cast<uint32_t>(t));
    // answer_mask as alternating run lengths, first run counts zeros
    std::vector<uint32_t> runs;
    uint8_t cur = 0;
    uint32_t len = 0;
    for (uint8_t m : s.answer_mask) {
      if (m == cur) {
        ++len;
      } else {
        runs.push_back(len);
        cur = m;
        len = 1;
      }
    }
    runs.push_back(len);
    write_u32(f, static_cast<uint32_t>(runs.size()));
    for (uint32_t r : runs) write_u32(f, r);
    write_str(f, s.bucket);
    write_str(f, s.meta);
  }
  if (!f) throw IoError("short write on corpus " + path);
  // human-readable sidecar with the token table
  std::ofstream side(path + ".vocab.json");
  side << nlohmann::json({{"task", task_name(task)}, {"vocab", vocab.ids}}).dump(2) << "\n";
}

Corpus read_corpus(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read corpus " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::string(magic, 8) != "TRACORP1") throw IoError("bad corpus magic in " + path);
  nlohmann::json header = nlohmann::json::parse(read_str(f));
  Corpus c;
  c.task = task_from(header.at("task").get<std::string>());
  c.vocab.ids = header.at("vocab").get<std::map<std::string, int>>();
  c.vocab.size = header.at("vocab_size").get<int>();
  c.seed = header.value("seed", uint64_t(0));
  c.params_desc = header.value("params", std::string());
  const auto n = header.at("n_samples").get<std::size_t>();
  c.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    TaskSample s;
    const uint32_t len = read_u32(f);
    s.tokens.resize(len);
    for (auto& t : s.tokens) t = static_cast<int>(read_u32(f));
    s.answer_mask.reserve(len);
    const uint32_t n_runs = read_u32(f);
    uint8_t cur = 0;
    for (uint32_t r = 0; r < n_runs; ++r) {
      const uint32_t run = read_u32(f);
      s.answer_mask.insert(s.answer_mask.end(), run, cur);
      cur = cur ? 0 : 1;
    }
    if (s.answer_mask.size() != len) throw IoError("bad mask runs in " + path);
    s.bucket = read_str(f);
    s.meta = read_str(f);
    if (!f) throw IoError("truncated corpus " + path);
    c.samples.push_back(std::move(s));
  }
  return c;
}

}  // namespace tra
