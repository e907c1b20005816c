#include "tra/harness.hpp"

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace tra {

namespace {

double now_sec() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

int task_default_batch(Task t, const std::string& preset) {
  if (preset == "mini" && (t == Task::COPY || t == Task::INDUCTION)) return 128;
  return 64;
}

}  // namespace

nlohmann::json BucketSpec::to_json() const {
  return {{"name", name}, {"lo", lo}, {"hi", hi}, {"p_ignore", p_ignore}};
}

BucketSpec BucketSpec::from_json(const nlohmann::json& j) {
  BucketSpec b;
  b.name = j.at("name").get<std::string>();
  b.lo = j.value("lo", 0);
  b.hi = j.value("hi", 0);
  b.p_ignore = j.value("p_ignore", 0.8);
  return b;
}

void ExperimentConfig::apply_defaults() {
  if (batch_size == 0) batch_size = task_default_batch(task, preset);
  const bool mini = preset == "mini";
  int def_lo = 1, def_hi = mini ? 50 : 30;
  switch (task) {
    case Task::COPY: break;
    case Task::INDUCTION: break;
    case Task::FLIPFLOP: def_lo = def_hi = ffl_seq_len; break;
    case Task::FLIPFLOP_PP:
      def_lo = 2;
      def_hi = mini ? 50 : 40;
      break;
  }
  if (train_hi == 0) train_hi = def_hi;
  // copy/induct train at one fixed length; the buckets carry the eval ranges
  if (train_lo == 0)
    train_lo = (task == Task::COPY || task == Task::INDUCTION) ? train_hi : def_lo;
  if (task == Task::FLIPFLOP) train_lo = train_hi = ffl_seq_len;
  if (buckets.empty()) {
    if (task == Task::FLIPFLOP) {
      buckets = {{"iid", ffl_seq_len, ffl_seq_len, p_ignore_train},
                 {"sparse", ffl_seq_len, ffl_seq_len, 0.98},
                 {"dense", ffl_seq_len, ffl_seq_len, 0.1}};
    } else if (mini) {
      const int lo = train_lo;
      buckets = {{"iid", lo, 50, 0},
                 {"ood50-100", 51, 100, 0},
                 {"ood100-200", 101, 200, 0},
                 {"ood200-300", 201, 300, 0}};
    } else if (task == Task::FLIPFLOP_PP) {
      buckets = {{"iid", train_lo, train_hi, 0},
                 {"ood41-80", train_hi + 1, 80, 0},
                 {"ood81-140", 81, 140, 0},
                 {"ood141-200", 141, 200, 0}};
    } else {
      buckets = {{"iid", train_lo, train_hi, 0},
                 {"ood2x", train_hi + 1, 2 * train_hi, 0},
                 {"ood3x", 2 * train_hi + 1, 3 * train_hi, 0}};
    }
  }
}

int ExperimentConfig::token_len(int content_len) const {
  switch (task) {
    case Task::COPY: return 2 * content_len + 2;
    case Task::INDUCTION: return content_len + 3;
    case Task::FLIPFLOP: return content_len + 1;
    case Task::FLIPFLOP_PP: return content_len + 4;
  }
  throw ConfigError("bad task");
}

int ExperimentConfig::model_max_len() const { return token_len(train_hi); }

int ExperimentConfig::eval_max_tokens() const {
  int mx = model_max_len();
  for (const auto& b : buckets) mx = std::max(mx, token_len(b.hi));
  return mx;
}

ModelConfig ExperimentConfig::model_config() const {
  const int vocab = task_vocab(task).size;
  ModelConfig mc;
  if (preset == "mini")
    mc = ModelConfig::mini(variant, vocab, model_max_len());
  else if (preset == "probe")
    mc = ModelConfig::probe(variant, vocab, model_max_len());
  else if (preset == "desk")
    mc = ModelConfig::desk(variant, vocab, model_max_len());
  else
    throw ConfigError("unknown preset '" + preset + "'");
  mc.dropout_p = dropout_p;
  if (variant == Variant::LABEL) mc.label_range = eval_max_tokens();
  return mc;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json jb = nlohmann::json::array();
  for (const auto& b : buckets) jb.push_back(b.to_json());
  return {{"task", task_name(task)},
          {"variant", variant_name(variant)},
          {"preset", preset},
          {"steps", steps},
          {"batch_size", batch_size},
          {"train_lo", train_lo},
          {"train_hi", train_hi},
          {"p_ignore_train", p_ignore_train},
          {"ffl_seq_len", ffl_seq_len},
          {"seed", seed},
          {"eval_seed", eval_seed},
          {"eval_samples", eval_samples},
          {"eval_batch", eval_batch},
          {"lr", lr},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"weight_decay", weight_decay},
          {"dropout_p", dropout_p},
          {"log_every", log_every},
          {"early_stop", early_stop},
          {"early_stop_acc", early_stop_acc},
          {"early_stop_every", early_stop_every},
          {"buckets", jb},
          {"run_dir", run_dir}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.task = task_from(j.at("task").get<std::string>());
  c.variant = variant_from(j.at("variant").get<std::string>());
  c.preset = j.value("preset", std::string("desk"));
  c.steps = j.value("steps", 20000);
  c.batch_size = j.value("batch_size", 0);
  c.train_lo = j.value("train_lo", 0);
  c.train_hi = j.value("train_hi", 0);
  c.p_ignore_train = j.value("p_ignore_train", 0.8);
  c.ffl_seq_len = j.value("ffl_seq_len", 256);
  c.seed = j.value("seed", uint64_t(1));
  c.eval_seed = j.value("eval_seed", uint64_t(9000));
  c.eval_samples = j.value("eval_samples", 1000);
  c.eval_batch = j.value("eval_batch", 64);
  c.lr = j.value("lr", 3e-4);
  c.beta1 = j.value("beta1", 0.9);
  c.beta2 = j.value("beta2", 0.999);
  c.adam_eps = j.value("adam_eps", 1e-8);
  c.weight_decay = j.value("weight_decay", 0.01);
  c.dropout_p = j.value("dropout_p", 0.01);
  c.log_every = j.value("log_every", 200);
  c.early_stop = j.value("early_stop", false);
  c.early_stop_acc = j.value("early_stop_acc", 1.0);
  c.early_stop_every = j.value("early_stop_every", 1000);
  if (j.contains("buckets"))
    for (const auto& bj : j.at("buckets")) c.buckets.push_back(BucketSpec::from_json(bj));
  c.run_dir = j.value("run_dir", std::string());
  return c;
}

const BucketResult* EvalReport::bucket(const std::string& name) const {
  for (const auto& b : buckets)
    if (b.name == name) return &b;
  return nullptr;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json jb = nlohmann::json::array();
  for (const auto& b : buckets) {
    nlohmann::json meta = nlohmann::json::object();
    for (const auto& [k, v] : b.by_meta)
      meta[k] = {{"n", v.first}, {"full_correct", v.second}};
    jb.push_back({{"name", b.name},
                  {"n", b.n},
                  {"full_correct", b.full_correct},
                  {"full_acc", b.full_acc()},
                  {"tok_total", b.tok_total},
                  {"tok_correct", b.tok_correct},
                  {"tok_acc", b.tok_acc()},
                  {"by_meta", meta}});
  }
  return {{"config", config_echo},
          {"seed", seed},
          {"steps_trained", steps_trained},
          {"final_loss", final_loss},
          {"fingerprint", fingerprint},
          {"train_wall_sec", train_wall_sec},
          {"eval_wall_sec", eval_wall_sec},
          {"buckets", jb}};
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.config_echo = j.value("config", nlohmann::json::object());
  r.seed = j.value("seed", uint64_t(0));
  r.steps_trained = j.value("steps_trained", int64_t(0));
  r.final_loss = j.value("final_loss", 0.0);
  r.fingerprint = j.value("fingerprint", std::string());
  r.train_wall_sec = j.value("train_wall_sec", 0.0);
  r.eval_wall_sec = j.value("eval_wall_sec", 0.0);
  for (const auto& bj : j.at("buckets")) {
    BucketResult b;
    b.name = bj.at("name").get<std::string>();
    b.n = bj.value("n", 0);
    b.full_correct = bj.value("full_correct", 0);
    b.tok_total = bj.value("tok_total", int64_t(0));
    b.tok_correct = bj.value("tok_correct", int64_t(0));
    if (bj.contains("by_meta"))
      for (auto it = bj.at("by_meta").begin(); it != bj.at("by_meta").end(); ++it)
        b.by_meta[it.key()] = {it.value().value("n", 0), it.value().value("full_correct", 0)};
    r.buckets.push_back(std::move(b));
  }
  return r;
}

std::string model_fingerprint(Model& m) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix_bytes = [&h](const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (auto& [name, t] : m.params()) {
    mix_bytes(name.data(), name.size());
    mix_bytes(t.data->data(), t.numel() * sizeof(float));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

struct Packed {
  int b = 0, s = 0;
  std::vector<int> tokens;
  std::vector<int> ce_targets;
  std::vector<uint8_t> ce_mask;
};

// Pads with token 0 on the right; causality keeps padding inert. ce entries
// are shifted so position t is scored against token t+1.
Packed pack_batch(const std::vector<TaskSample>& batch, bool lm_style) {
  Packed p;
  p.b = static_cast<int>(batch.size());
  for (const auto& smp : batch) p.s = std::max(p.s, static_cast<int>(smp.tokens.size()));
  p.tokens.assign(static_cast<std::size_t>(p.b) * p.s, 0);
  p.ce_targets.assign(p.tokens.size(), 0);
  p.ce_mask.assign(p.tokens.size(), 0);
  for (int bi = 0; bi < p.b; ++bi) {
    const auto& smp = batch[bi];
    const int len = static_cast<int>(smp.tokens.size());
    std::copy(smp.tokens.begin(), smp.tokens.end(),
              p.tokens.begin() + static_cast<std::size_t>(bi) * p.s);
    for (int t = 0; t + 1 < len; ++t) {
      const bool scored = lm_style ? true : smp.answer_mask[t + 1] != 0;
      if (scored) {
        p.ce_mask[static_cast<std::size_t>(bi) * p.s + t] = 1;
        p.ce_targets[static_cast<std::size_t>(bi) * p.s + t] = smp.tokens[t + 1];
      }
    }
  }
  return p;
}

std::vector<TaskSample> gen_batch(const ExperimentConfig& cfg, int n, int lo, int hi,
                                  double p_ignore, Rng& rng, const std::string& bucket) {
  if (cfg.task == Task::FLIPFLOP) return gen_flipflop(n, cfg.ffl_seq_len, p_ignore, rng, bucket);
  return generate(cfg.task, n, lo, hi, 0.0, rng, bucket);
}

}  // namespace

TrainResult train(Model& m, const ExperimentConfig& cfg, const std::string& log_path) {
  Rng data_rng(Rng::derive(cfg.seed, 0x747261696eULL));
  m.set_dropout_seed(Rng::derive(cfg.seed, 0x64726f70ULL));
  AdamW::Hyper h;
  h.lr = cfg.lr;
  h.beta1 = cfg.beta1;
  h.beta2 = cfg.beta2;
  h.eps = cfg.adam_eps;
  h.weight_decay = cfg.weight_decay;
  AdamW opt(m.param_tensors(), h);

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw IoError("cannot write training log " + log_path);
    log << "step,loss,lr\n";
  }

  const bool lm_style = cfg.task == Task::FLIPFLOP;
  const double t0 = now_sec();
  TrainResult res;
  for (int step = 0; step < cfg.steps; ++step) {
    std::vector<TaskSample> batch =
        gen_batch(cfg, cfg.batch_size, cfg.train_lo, cfg.train_hi, cfg.p_ignore_train, data_rng,
                  "train");
    Packed p = pack_batch(batch, lm_style);
    Tensor logits = m.forward(p.tokens, p.b, p.s, true, data_rng, static_cast<uint64_t>(step));
    Tensor loss = cross_entropy(logits, p.ce_targets, p.ce_mask);
    const double cur_lr = lr_at(cfg.lr, step, cfg.steps);
    const float lv = loss.item();
    loss.backward();
    if (!std::isfinite(lv))
      throw NumericError("non-finite training loss at step " + std::to_string(step) + " (lr " +
                         std::to_string(cur_lr) + ", grad norm " +
                         std::to_string(opt.grad_norm()) + ")");
    opt.step(cur_lr);
    opt.zero_grad();
    res.final_loss = lv;
    if (log && (step % cfg.log_every == 0 || step + 1 == cfg.steps))
      log << step << "," << lv << "," << cur_lr << "\n" << std::flush;

    if (cfg.early_stop && cfg.early_stop_every > 0 && (step + 1) % cfg.early_stop_every == 0 &&
        step + 1 < cfg.steps) {
      ExperimentConfig probe = cfg;
      probe.eval_samples = 200;
      probe.buckets = {cfg.buckets.front()};
      EvalReport r = evaluate(m, probe);
      if (!r.buckets.empty() && r.buckets[0].full_acc() >= cfg.early_stop_acc) {
        res.steps = step + 1;
        res.wall_sec = now_sec() - t0;
        return res;
      }
    }
  }
  res.steps = cfg.steps;
  res.wall_sec = now_sec() - t0;
  return res;
}

std::vector<std::vector<int>> predict_argmax(Model& m, const std::vector<TaskSample>& batch,
                                             Rng& scratch_rng) {
  NoGradGuard ng;
  Packed p = pack_batch(batch, false);
  Tensor logits = m.forward(p.tokens, p.b, p.s, false, scratch_rng, 0);
  const int v = logits.shape[2];
  const float* pl = logits.ptr();
  std::vector<std::vector<int>> preds(batch.size());
  for (int bi = 0; bi < p.b; ++bi) {
    const int len = static_cast<int>(batch[bi].tokens.size());
    preds[bi].assign(len, -1);
    for (int t = 1; t < len; ++t) {
      if (!batch[bi].answer_mask[t]) continue;
      const float* row = pl + (static_cast<std::size_t>(bi) * p.s + (t - 1)) * v;
      int best = 0;
      for (int j = 1; j < v; ++j)
        if (row[j] > row[best]) best = j;
      preds[bi][t] = best;
    }
  }
  return preds;
}

EvalReport evaluate(Model& m, const ExperimentConfig& cfg) {
  NoGradGuard ng;
  const double t0 = now_sec();
  EvalReport rep;
  rep.seed = cfg.seed;
  rep.config_echo = cfg.to_json();
  rep.fingerprint = model_fingerprint(m);

  Rng scratch(Rng::derive(cfg.eval_seed, 0x73637261746368ULL));
  for (std::size_t bidx = 0; bidx < cfg.buckets.size(); ++bidx) {
    const BucketSpec& bs = cfg.buckets[bidx];
    // eval corpora depend only on (task, bucket, eval_seed): every variant
    // and training seed sees identical test items
    Rng brng(Rng::derive(cfg.eval_seed,
                         mix64(static_cast<uint64_t>(cfg.task) * 131 + bidx)));
    std::vector<TaskSample> samples =
        gen_batch(cfg, cfg.eval_samples, bs.lo, bs.hi, bs.p_ignore, brng, bs.name);

    BucketResult br;
    br.name = bs.name;
    for (std::size_t off = 0; off < samples.size(); off += cfg.eval_batch) {
      const std::size_t end = std::min(samples.size(), off + cfg.eval_batch);
      std::vector<TaskSample> chunk(samples.begin() + off, samples.begin() + end);
      std::vector<std::vector<int>> preds = predict_argmax(m, chunk, scratch);
      for (std::size_t i = 0; i < chunk.size(); ++i) {
        const TaskSample& smp = chunk[i];
        bool full = true;
        for (std::size_t t = 0; t < smp.tokens.size(); ++t) {
          if (!smp.answer_mask[t]) continue;
          ++br.tok_total;
          if (preds[i][t] == smp.tokens[t])
            ++br.tok_correct;
          else
            full = false;
        }
        ++br.n;
        if (full) ++br.full_correct;
        if (!smp.meta.empty()) {
          auto& [mn, mc] = br.by_meta[smp.meta];
          ++mn;
          if (full) ++mc;
        }
      }
    }
    rep.buckets.push_back(std::move(br));
  }
  rep.eval_wall_sec = now_sec() - t0;
  return rep;
}

EvalReport run_cell(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.apply_defaults();
  if (cfg.run_dir.empty()) throw ConfigError("run_cell: run_dir required");
  std::filesystem::create_directories(cfg.run_dir);
  {
    std::ofstream f(cfg.run_dir + "/config.json");
    f << cfg.to_json().dump(2) << "\n";
  }
  Model m;
  m.init(cfg.model_config(), cfg.seed);
  TrainResult tr = train(m, cfg, cfg.run_dir + "/train_log.csv");
  EvalReport rep = evaluate(m, cfg);
  rep.steps_trained = tr.steps;
  rep.final_loss = tr.final_loss;
  rep.train_wall_sec = tr.wall_sec;
  m.save(cfg.run_dir + "/model.ckpt", cfg.seed, 0, tr.steps);
  std::ofstream f(cfg.run_dir + "/eval_report.json");
  f << rep.to_json().dump(2) << "\n";
  if (!f) throw IoError("cannot write eval report under " + cfg.run_dir);
  return rep;
}

// ----- LM probe -----

nlohmann::json LmProbeConfig::to_json() const {
  return {{"corpus_path", corpus_path},
          {"variant", variant_name(variant)},
          {"preset", preset},
          {"train_window", train_window},
          {"eval_windows", eval_windows},
          {"steps", steps},
          {"batch_size", batch_size},
          {"lr", lr},
          {"dropout_p", dropout_p},
          {"seed", seed},
          {"holdout_frac", holdout_frac},
          {"max_eval_tokens", max_eval_tokens},
          {"run_dir", run_dir}};
}

std::vector<LmProbeRow> lm_probe(const LmProbeConfig& cfg) {
  std::ifstream f(cfg.corpus_path, std::ios::binary);
  if (!f) throw IoError("cannot read corpus " + cfg.corpus_path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 1000000)
    throw ConfigError("lm corpus too small: " + std::to_string(bytes.size()) +
                      " bytes (need >= 1M)");
  std::size_t max_win = static_cast<std::size_t>(cfg.train_window);
  for (int w : cfg.eval_windows) max_win = std::max(max_win, static_cast<std::size_t>(w));
  const std::size_t holdout =
      std::max(max_win + 1, static_cast<std::size_t>(bytes.size() * cfg.holdout_frac));
  if (holdout + max_win + 2 >= bytes.size()) throw ConfigError("lm corpus too small for split");
  const std::size_t train_n = bytes.size() - holdout;

  ModelConfig mc;
  if (cfg.preset == "probe")
    mc = ModelConfig::probe(cfg.variant, 256, cfg.train_window);
  else if (cfg.preset == "desk")
    mc = ModelConfig::desk(cfg.variant, 256, cfg.train_window);
  else if (cfg.preset == "mini")
    mc = ModelConfig::mini(cfg.variant, 256, cfg.train_window);
  else
    throw ConfigError("unknown preset '" + cfg.preset + "'");
  mc.dropout_p = cfg.dropout_p;
  if (cfg.variant == Variant::LABEL) {
    int mx = cfg.train_window;
    for (int w : cfg.eval_windows) mx = std::max(mx, w);
    mc.label_range = mx;
  }

  Model m;
  m.init(mc, cfg.seed);
  m.set_dropout_seed(Rng::derive(cfg.seed, 0x64726f70ULL));
  AdamW::Hyper h;
  h.lr = cfg.lr;
  AdamW opt(m.param_tensors(), h);
  Rng rng(Rng::derive(cfg.seed, 0x6c6d70726f6265ULL));

  const int w = cfg.train_window;
  std::ofstream log;
  if (!cfg.run_dir.empty()) {
    std::filesystem::create_directories(cfg.run_dir);
    std::ofstream cf(cfg.run_dir + "/config.json");
    cf << cfg.to_json().dump(2) << "\n";
    log.open(cfg.run_dir + "/train_log.csv");
    log << "step,loss,lr\n";
  }
  std::vector<int> toks(static_cast<std::size_t>(cfg.batch_size) * w);
  std::vector<int> tgt(toks.size());
  std::vector<uint8_t> mask(toks.size());
  for (int step = 0; step < cfg.steps; ++step) {
    for (int bi = 0; bi < cfg.batch_size; ++bi) {
      const std::size_t off = rng.next_below(train_n - w - 1);
      for (int t = 0; t < w; ++t) {
        toks[static_cast<std::size_t>(bi) * w + t] = bytes[off + t];
        tgt[static_cast<std::size_t>(bi) * w + t] = bytes[off + t + 1];
        mask[static_cast<std::size_t>(bi) * w + t] = 1;
      }
    }
    Tensor logits = m.forward(toks, cfg.batch_size, w, true, rng, static_cast<uint64_t>(step));
    Tensor loss = cross_entropy(logits, tgt, mask);
    const double cur_lr = lr_at(cfg.lr, step, cfg.steps);
    const float lv = loss.item();
    loss.backward();
    if (!std::isfinite(lv))
      throw NumericError("non-finite lm loss at step " + std::to_string(step) + " (lr " +
                         std::to_string(cur_lr) + ", grad norm " +
                         std::to_string(opt.grad_norm()) + ")");
    opt.step(cur_lr);
    opt.zero_grad();
    if (log && (step % 100 == 0 || step + 1 == cfg.steps))
      log << step << "," << lv << "," << cur_lr << "\n" << std::flush;
  }

  // held-out NLL per window, accumulated in 64-bit from the logits
  NoGradGuard ng;
  std::vector<LmProbeRow> rows;
  Rng scratch(1);
  for (int win : cfg.eval_windows) {
    LmProbeRow row;
    row.window = win;
    double total_nll = 0.0;
    int64_t total_tok = 0;
    std::size_t off = train_n;
    while (off + win + 1 <= bytes.size() && total_tok < cfg.max_eval_tokens) {
      std::vector<int> ctx(win);
      for (int t = 0; t < win; ++t) ctx[t] = bytes[off + t];
      Tensor logits = m.forward(ctx, 1, win, false, scratch, 0);
      const float* pl = logits.ptr();
      for (int t = 0; t + 1 < win; ++t) {
        const float* lrow = pl + static_cast<std::size_t>(t) * 256;
        double mx = lrow[0];
        for (int j = 1; j < 256; ++j) mx = std::max(mx, static_cast<double>(lrow[j]));
        double z = 0.0;
        for (int j = 0; j < 256; ++j) z += std::exp(static_cast<double>(lrow[j]) - mx);
        total_nll += mx + std::log(z) - static_cast<double>(lrow[bytes[off + t + 1]]);
        ++total_tok;
      }
      off += win;
    }
    if (total_tok == 0) throw ConfigError("holdout too small for window " + std::to_string(win));
    row.tokens = total_tok;
    row.nll = total_nll / static_cast<double>(total_tok);
    row.ppl = std::exp(row.nll);
    rows.push_back(row);
  }
  if (!cfg.run_dir.empty()) {
    std::ofstream csv(cfg.run_dir + "/ppl.csv");
    csv << "window,tokens,nll,ppl\n";
    for (const auto& r : rows)
      csv << r.window << "," << r.tokens << "," << r.nll << "," << r.ppl << "\n";
  }
  return rows;
}

void make_lm_corpus(const std::string& path, std::size_t min_bytes, uint64_t seed) {
  Rng rng(Rng::derive(seed, 0x636f72707573ULL));
  // syllable babble with per-paragraph topic vocabularies: local word reuse
  // gives longer contexts something to predict
  static const char* onset[] = {"b", "br", "c", "ch", "d", "dr", "f", "g", "gr", "h",
                                "j", "k", "l", "m", "n", "p", "pl", "r", "s", "st",
                                "t", "tr", "v", "w", "z"};
  static const char* nucleus[] = {"a", "e", "i", "o", "u", "ai", "ea", "ou"};
  static const char* coda[] = {"", "n", "r", "s", "t", "l", "nd", "st", "m", "ck"};
  auto make_word = [&](Rng& r) {
    std::string w;
    const int syll = 1 + static_cast<int>(r.next_below(3));
    for (int i = 0; i < syll; ++i) {
      w += onset[r.next_below(std::size(onset))];
      w += nucleus[r.next_below(std::size(nucleus))];
      if (i + 1 == syll || r.next_below(3) == 0) w += coda[r.next_below(std::size(coda))];
    }
    return w;
  };
  std::vector<std::string> common;
  for (int i = 0; i < 60; ++i) common.push_back(make_word(rng));
  std::vector<std::vector<std::string>> topics(48);
  for (auto& tv : topics)
    for (int i = 0; i < 24; ++i) tv.push_back(make_word(rng));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write corpus " + path);
  std::size_t written = 0;
  while (written < min_bytes) {
    const auto& topic = topics[rng.next_below(topics.size())];
    const int sentences = 3 + static_cast<int>(rng.next_below(6));
    std::string para;
    for (int si = 0; si < sentences; ++si) {
      const int words = 6 + static_cast<int>(rng.next_below(10));
      for (int wi = 0; wi < words; ++wi) {
        const std::string& word = rng.next_below(10) < 6
                                      ? topic[rng.next_below(topic.size())]
                                      : common[rng.next_below(common.size())];
        if (wi == 0) {
          para += static_cast<char>(std::toupper(word[0]));
          para += word.substr(1);
        } else {
          para += ' ';
          para += word;
        }
      }
      para += ". ";
    }
    para += "\n\n";
    f.write(para.data(), static_cast<std::streamsize>(para.size()));
    written += para.size();
  }
  if (!f) throw IoError("short write on corpus " + path);
}

// ----- suite -----

SuiteSpec SuiteSpec::from_json(const nlohmann::json& j) {
  SuiteSpec s;
  for (const auto& t : j.at("tasks")) s.tasks.push_back(task_from(t.get<std::string>()));
  for (const auto& v : j.at("variants")) s.variants.push_back(variant_from(v.get<std::string>()));
  if (j.contains("seeds")) s.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (j.contains("base")) s.base = ExperimentConfig::from_json(j.at("base"));
  s.root = j.value("root", std::string());
  return s;
}

nlohmann::json SuiteSpec::to_json() const {
  nlohmann::json jt = nlohmann::json::array(), jv = nlohmann::json::array();
  for (Task t : tasks) jt.push_back(task_name(t));
  for (Variant v : variants) jv.push_back(variant_name(v));
  return {{"tasks", jt}, {"variants", jv}, {"seeds", seeds}, {"base", base.to_json()},
          {"root", root}};
}

double population_stdev(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size()));
}

namespace {

struct Cell {
  Task task;
  Variant variant;
  uint64_t seed;
  std::string dir;
};

bool cell_done(const Cell& c) {
  std::ifstream f(c.dir + "/eval_report.json");
  if (!f) return false;
  try {
    nlohmann::json j;
    f >> j;
    EvalReport::from_json(j);
    return true;
  } catch (...) {
    return false;
  }
}

int spawn_cell(const std::string& self_exe, const Cell& c) {
  const pid_t pid = fork();
  if (pid < 0) throw IoError("fork failed");
  if (pid == 0) {
    const std::string cfg_path = c.dir + "/config.json";
    execl(self_exe.c_str(), self_exe.c_str(), "run-cell", "--config-json", cfg_path.c_str(),
          static_cast<char*>(nullptr));
    _exit(127);
  }
  return pid;
}

}  // namespace

int run_suite(const SuiteSpec& spec, const std::string& self_exe, int jobs) {
  if (spec.root.empty()) throw ConfigError("suite: root directory required");
  std::filesystem::create_directories(spec.root);
  {
    std::ofstream f(spec.root + "/suite.json");
    f << spec.to_json().dump(2) << "\n";
  }
  std::vector<Cell> cells;
  for (Task t : spec.tasks)
    for (Variant v : spec.variants)
      for (uint64_t s : spec.seeds) {
        Cell c{t, v, s,
               spec.root + "/" + task_name(t) + "_" + variant_name(v) + "_s" +
                   std::to_string(s)};
        cells.push_back(std::move(c));
      }

  std::vector<Cell> todo;
  for (const auto& c : cells) {
    if (cell_done(c)) {
      std::cout << "suite: skip " << c.dir << " (report exists)\n";
      continue;
    }
    std::filesystem::create_directories(c.dir);
    ExperimentConfig cfg = spec.base;
    cfg.task = c.task;
    cfg.variant = c.variant;
    cfg.seed = c.seed;
    cfg.run_dir = c.dir;
    cfg.buckets.clear();
    cfg.batch_size = spec.base.batch_size;
    cfg.train_lo = cfg.train_hi = 0;
    cfg.apply_defaults();
    std::ofstream f(c.dir + "/config.json");
    f << cfg.to_json().dump(2) << "\n";
    todo.push_back(c);
  }

  int failures = 0;
  std::size_t next = 0;
  std::map<pid_t, std::string> running;
  const int max_jobs = std::max(1, jobs);
  while (next < todo.size() || !running.empty()) {
    while (next < todo.size() && static_cast<int>(running.size()) < max_jobs) {
      const Cell& c = todo[next++];
      std::cout << "suite: launch " << c.dir << "\n" << std::flush;
      running[spawn_cell(self_exe, c)] = c.dir;
    }
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid > 0) {
      auto it = running.find(pid);
      const bool ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
      if (!ok) {
        ++failures;
        std::cout << "suite: FAILED " << (it != running.end() ? it->second : "?") << " (status "
                  << status << ")\n";
      }
      if (it != running.end()) running.erase(it);
    }
  }

  // merge everything present
  std::ofstream csv(spec.root + "/results.csv");
  csv << "task,variant,seed,bucket,n,full_acc,tok_acc\n";
  std::map<std::string, std::map<std::string, std::vector<double>>> table;  // row -> bucket -> accs
  std::vector<std::string> missing;
  for (const auto& c : cells) {
    std::ifstream f(c.dir + "/eval_report.json");
    if (!f) {
      missing.push_back(c.dir);
      continue;
    }
    nlohmann::json j;
    f >> j;
    EvalReport rep = EvalReport::from_json(j);
    const std::string rowkey = std::string(task_name(c.task)) + "," + variant_name(c.variant);
    for (const auto& b : rep.buckets) {
      csv << task_name(c.task) << "," << variant_name(c.variant) << "," << c.seed << ","
          << b.name << "," << b.n << "," << b.full_acc() << "," << b.tok_acc() << "\n";
      table[rowkey][b.name].push_back(b.full_acc());
    }
  }
  std::ofstream tab(spec.root + "/results.txt");
  for (const auto& [row, bs] : table) {
    tab << row << "\n";
    for (const auto& [bucket, accs] : bs) {
      double mean = 0;
      for (double a : accs) mean += a;
      mean /= accs.empty() ? 1.0 : static_cast<double>(accs.size());
      tab << "  " << bucket << ": " << mean * 100 << " +- " << population_stdev(accs) * 100
          << " (" << accs.size() << " seeds)\n";
    }
  }
  for (const auto& miss : missing) tab << "MISSING: " << miss << "\n";
  std::cout << "suite: merged " << cells.size() - missing.size() << "/" << cells.size()
            << " cells, " << failures << " failures\n";
  return failures == 0 && missing.empty() ? 0 : 1;
}

}  // namespace tra
