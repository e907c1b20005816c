#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tra/model.hpp"
#include "tra/oracles.hpp"
#include "tra/optim.hpp"
#include "tra/tasks.hpp"

namespace tra {

struct BucketSpec {
  std::string name;
  int lo = 0, hi = 0;      // task length range (pre-SEP content length)
  double p_ignore = 0.8;   // flip-flop regime

  nlohmann::json to_json() const;
  static BucketSpec from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
  Task task = Task::COPY;
  Variant variant = Variant::TRA;
  std::string preset = "desk";  // desk | mini | probe
  int steps = 20000;
  int batch_size = 0;  // 0 -> task default
  int train_lo = 0, train_hi = 0;  // 0 -> task default
  double p_ignore_train = 0.8;
  int ffl_seq_len = 256;
  uint64_t seed = 1;
  uint64_t eval_seed = 9000;  // shared across variants so test items coincide
  int eval_samples = 1000;
  int eval_batch = 64;
  double lr = 3e-4;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8, weight_decay = 0.01;
  double dropout_p = 0.01;
  int log_every = 200;
  bool early_stop = false;       // off by default: one full pass through the data
  double early_stop_acc = 1.0;   // stop when IID full-match reaches this
  int early_stop_every = 1000;
  std::vector<BucketSpec> buckets;  // empty -> task defaults
  std::string run_dir;

  void apply_defaults();
  int model_max_len() const;    // max TRAINING token length (REL/APE table size)
  int eval_max_tokens() const;  // longest eval sequence (label_range)
  int token_len(int content_len) const;
  ModelConfig model_config() const;

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

struct BucketResult {
  std::string name;
  int n = 0;
  int full_correct = 0;
  int64_t tok_total = 0, tok_correct = 0;
  // per-instruction breakdown for flip-flops++
  std::map<std::string, std::pair<int, int>> by_meta;  // meta -> {n, full_correct}

  double full_acc() const { return n ? static_cast<double>(full_correct) / n : 0.0; }
  double tok_acc() const {
    return tok_total ? static_cast<double>(tok_correct) / tok_total : 0.0;
  }
};

struct EvalReport {
  nlohmann::json config_echo;
  uint64_t seed = 0;
  int64_t steps_trained = 0;
  double final_loss = 0.0;
  std::string fingerprint;
  double train_wall_sec = 0.0, eval_wall_sec = 0.0;
  std::vector<BucketResult> buckets;

  const BucketResult* bucket(const std::string& name) const;
  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// FNV-1a over the little-endian parameter bytes; stable identity for a
// trained model.
std::string model_fingerprint(Model& m);

struct TrainResult {
  int64_t steps = 0;
  double final_loss = 0.0;
  double wall_sec = 0.0;
};

// Deterministic loop: sample batch, forward, masked cross-entropy, backward,
// AdamW under warmup+cosine. Aborts with a NumericError dump on non-finite
// loss. FFL trains language-model style (every next-token position); the
// single-answer tasks train on answer positions only.
TrainResult train(Model& m, const ExperimentConfig& cfg,
                  const std::string& log_path = "");

// Teacher-forced exact match over fixed seeded corpora, >= eval_samples per
// bucket. Pure read-only pass over the model.
EvalReport evaluate(Model& m, const ExperimentConfig& cfg);

// Convenience: train + evaluate + write report/checkpoint under run_dir.
EvalReport run_cell(const ExperimentConfig& cfg);

// Greedy argmax predictions for one padded batch; rows gives each sample's
// true length.
std::vector<std::vector<int>> predict_argmax(Model& m, const std::vector<TaskSample>& batch,
                                             Rng& scratch_rng);

// ----- LM probe -----
struct LmProbeConfig {
  std::string corpus_path;
  Variant variant = Variant::TRA;
  std::string preset = "desk";
  int train_window = 128;
  std::vector<int> eval_windows = {128, 256, 512, 1024, 2048, 4096};
  int steps = 3000;
  int batch_size = 64;
  double lr = 3e-4;
  double dropout_p = 0.01;
  uint64_t seed = 1;
  double holdout_frac = 0.1;
  int64_t max_eval_tokens = 200000;  // per window, keeps the pass bounded
  std::string run_dir;

  nlohmann::json to_json() const;
};

struct LmProbeRow {
  int window = 0;
  int64_t tokens = 0;
  double nll = 0.0;   // mean nats per predicted byte, accumulated in 64-bit
  double ppl = 0.0;
};

std::vector<LmProbeRow> lm_probe(const LmProbeConfig& cfg);

// Deterministic synthetic byte corpus for the probe: word-level Markov
// babble with long-range recurring vocabulary, >= min_bytes long.
void make_lm_corpus(const std::string& path, std::size_t min_bytes, uint64_t seed);

// ----- suite -----
struct SuiteSpec {
  std::vector<Task> tasks;
  std::vector<Variant> variants;
  std::vector<uint64_t> seeds = {1, 2, 3, 4};
  ExperimentConfig base;  // task/variant/seed overwritten per cell
  std::string root;

  static SuiteSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

// Runs every cell as a child process of this binary (resumable: cells with an
// existing report are skipped), then merges reports into CSV + a text table.
int run_suite(const SuiteSpec& spec, const std::string& self_exe, int jobs);

double population_stdev(const std::vector<double>& xs);

}  // namespace tra
