#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tra/common.hpp"
#include "tra/rng.hpp"

namespace tra {

enum class Task { FLIPFLOP, INDUCTION, COPY, FLIPFLOP_PP };

const char* task_name(Task t);
Task task_from(const std::string& s);

// One teacher-forced sample. answer_mask[t] == 1 means token t is scored:
// the model must predict tokens[t] from the logits at position t-1.
struct TaskSample {
  std::vector<int> tokens;
  std::vector<uint8_t> answer_mask;
  std::string bucket;
  std::string meta;  // instruction kind for flip-flops++
};

struct Vocab {
  std::map<std::string, int> ids;
  int size = 0;

  int at(const std::string& name) const;
  static Vocab flipflop();    // BOS w i r b0 b1
  static Vocab induction(int alphabet);
  static Vocab copy();        // BOS SEP + 10 symbols
  static Vocab flipflop_pp(int alphabet);
};

inline constexpr int kInductAlphabet = 384;
inline constexpr int kFfppAlphabet = 26;

// flip-flop LM: seq_len alternating instruction/bit characters after BOS.
// First instruction is w, last is r; every bit after r equals the bit after
// the most recent w. Scored positions: the bit after every r.
std::vector<TaskSample> gen_flipflop(int n, int seq_len, double p_ignore, Rng& rng,
                                     const std::string& bucket);

// induction heads: distinct symbols s1..sL, then a repeated query s_q and its
// successor. Scored position: the successor token.
std::vector<TaskSample> gen_induction(int n, int len_lo, int len_hi, Rng& rng);

// copy: uniform string over 10 symbols, SEP, the string again. Scored
// positions: the whole second copy.
std::vector<TaskSample> gen_copy(int n, int len_lo, int len_hi, Rng& rng);

// flip-flops++: [BOS, INSTR, symbols with >=1 trigger, SEP, answer]; answer
// is the symbol adjacent to the first/last trigger per the instruction.
std::vector<TaskSample> gen_flipflop_pp(int n, int len_lo, int len_hi, Rng& rng);

Vocab task_vocab(Task t);
std::vector<TaskSample> generate(Task t, int n, int len_lo, int len_hi, double p_ignore,
                                 Rng& rng, const std::string& bucket = "");

// exact match: every scored position correct, else the sample fails.
bool exact_match(const TaskSample& s, const std::vector<int>& predictions);

// ----- corpus files: binary samples + json sidecar describing the vocab -----
void write_corpus(const std::string& path, Task task, const Vocab& vocab,
                  const std::vector<TaskSample>& samples, uint64_t seed,
                  const std::string& params_desc);

struct Corpus {
  Task task = Task::COPY;
  Vocab vocab;
  uint64_t seed = 0;
  std::string params_desc;
  std::vector<TaskSample> samples;
};

Corpus read_corpus(const std::string& path);

}  // namespace tra
