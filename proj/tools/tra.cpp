#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tra/blas.hpp"
#include "tra/gradcheck.hpp"
#include "tra/harness.hpp"
#include "tra/trace_export.hpp"

namespace {

using namespace tra;

// TRA_RUN_ROOT prefixes every relative output directory.
std::string resolve_dir(const std::string& p) {
  if (p.empty()) return p;
  const char* root = std::getenv("TRA_RUN_ROOT");
  if (!root || !*root || p.front() == '/') return p;
  return std::string(root) + "/" + p;
}

void add_experiment_opts(CLI::App* cmd, ExperimentConfig& cfg, std::string& task_s,
                         std::string& variant_s) {
  cmd->add_option("--task", task_s, "flipflop | induct | copy | flipflop_pp");
  cmd->add_option("--variant", variant_s, "tra | nope | ape | rel | rope | label | fot");
  cmd->add_option("--preset", cfg.preset, "desk | mini | probe");
  cmd->add_option("--steps", cfg.steps, "optimizer steps");
  cmd->add_option("--batch-size", cfg.batch_size, "0 = task default");
  cmd->add_option("--train-lo", cfg.train_lo);
  cmd->add_option("--train-hi", cfg.train_hi);
  cmd->add_option("--p-ignore", cfg.p_ignore_train, "flip-flop train ignore rate");
  cmd->add_option("--ffl-seq-len", cfg.ffl_seq_len);
  cmd->add_option("--seed", cfg.seed);
  cmd->add_option("--eval-seed", cfg.eval_seed);
  cmd->add_option("--eval-samples", cfg.eval_samples);
  cmd->add_option("--eval-batch", cfg.eval_batch);
  cmd->add_option("--lr", cfg.lr);
  cmd->add_option("--dropout", cfg.dropout_p);
  cmd->add_option("--weight-decay", cfg.weight_decay);
  cmd->add_option("--log-every", cfg.log_every);
  cmd->add_flag("--early-stop", cfg.early_stop, "stop once IID full-match hits --early-stop-acc");
  cmd->add_option("--early-stop-acc", cfg.early_stop_acc);
  cmd->add_option("--early-stop-every", cfg.early_stop_every);
}

void finish_experiment(ExperimentConfig& cfg, const std::string& task_s,
                       const std::string& variant_s) {
  if (!task_s.empty()) cfg.task = task_from(task_s);
  if (!variant_s.empty()) cfg.variant = variant_from(variant_s);
  cfg.run_dir = resolve_dir(cfg.run_dir);
}

int run(int argc, char** argv) {
  CLI::App app{"threshold relative attention workbench"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from an INI/TOML file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  // generate
  auto* gen = app.add_subcommand("generate", "write a task corpus + vocab sidecar");
  std::string g_task = "copy", g_out = "corpus.bin", g_bucket = "train";
  int g_n = 1000, g_lo = 1, g_hi = 30, g_seq = 256;
  double g_pi = 0.8;
  uint64_t g_seed = 1;
  gen->add_option("--task", g_task)->required();
  gen->add_option("--n", g_n);
  gen->add_option("--lo", g_lo);
  gen->add_option("--hi", g_hi);
  gen->add_option("--seq-len", g_seq, "flip-flop sequence length");
  gen->add_option("--p-ignore", g_pi);
  gen->add_option("--seed", g_seed);
  gen->add_option("--bucket", g_bucket);
  gen->add_option("--out", g_out)->required();

  // validate
  auto* val = app.add_subcommand("validate", "re-check a corpus against the task oracle");
  std::string v_in;
  val->add_option("--in", v_in)->required();

  // train (full cell: train + eval + report)
  auto* trn = app.add_subcommand("train", "train one model and evaluate it");
  ExperimentConfig t_cfg;
  std::string t_task, t_variant;
  add_experiment_opts(trn, t_cfg, t_task, t_variant);
  trn->add_option("--run-dir", t_cfg.run_dir)->required();

  // eval (existing checkpoint)
  auto* evl = app.add_subcommand("eval", "evaluate a checkpoint on task buckets");
  ExperimentConfig e_cfg;
  std::string e_task, e_variant, e_ckpt, e_out;
  add_experiment_opts(evl, e_cfg, e_task, e_variant);
  evl->add_option("--checkpoint", e_ckpt)->required();
  evl->add_option("--out", e_out, "write the report JSON here too");

  // hidden worker used by suite
  auto* cell = app.add_subcommand("run-cell", "run one suite cell from a JSON config");
  std::string c_json;
  cell->add_option("--config-json", c_json)->required();

  // suite
  auto* sui = app.add_subcommand("suite", "task x variant x seed grid with merged results");
  ExperimentConfig s_cfg;
  std::string s_tasks = "flipflop,induct,copy,flipflop_pp";
  std::string s_variants = "tra,nope,ape,rel,rope,label,fot";
  std::string s_seeds = "1,2,3,4", s_root, s_task_unused, s_variant_unused;
  int s_jobs = 1;
  add_experiment_opts(sui, s_cfg, s_task_unused, s_variant_unused);
  sui->add_option("--tasks", s_tasks, "comma list");
  sui->add_option("--variants", s_variants, "comma list");
  sui->add_option("--seeds", s_seeds, "comma list");
  sui->add_option("--jobs", s_jobs, "parallel cells");
  sui->add_option("--root", s_root)->required();

  // lm-probe + corpus maker
  auto* lmp = app.add_subcommand("lm-probe", "byte-LM perplexity vs eval window");
  LmProbeConfig l_cfg;
  std::string l_variant = "tra", l_windows;
  lmp->add_option("--corpus", l_cfg.corpus_path)->required();
  lmp->add_option("--variant", l_variant);
  lmp->add_option("--preset", l_cfg.preset);
  lmp->add_option("--train-window", l_cfg.train_window);
  lmp->add_option("--eval-windows", l_windows, "comma list, default 128..4096");
  lmp->add_option("--steps", l_cfg.steps);
  lmp->add_option("--batch-size", l_cfg.batch_size);
  lmp->add_option("--lr", l_cfg.lr);
  lmp->add_option("--dropout", l_cfg.dropout_p);
  lmp->add_option("--seed", l_cfg.seed);
  lmp->add_option("--max-eval-tokens", l_cfg.max_eval_tokens);
  lmp->add_option("--run-dir", l_cfg.run_dir);

  auto* mkc = app.add_subcommand("make-corpus", "deterministic synthetic byte corpus");
  std::string m_out = "corpus.txt";
  std::size_t m_bytes = 6 * 1000 * 1000;
  uint64_t m_seed = 7;
  mkc->add_option("--out", m_out)->required();
  mkc->add_option("--bytes", m_bytes);
  mkc->add_option("--seed", m_seed);

  // heatmap
  auto* hmp = app.add_subcommand("heatmap", "export per-head attention traces for one sample");
  std::string h_ckpt, h_task = "flipflop", h_out = "heatmap";
  int h_len = 64;
  double h_pi = 0.98;
  uint64_t h_seed = 5;
  hmp->add_option("--checkpoint", h_ckpt)->required();
  hmp->add_option("--task", h_task);
  hmp->add_option("--len", h_len, "content length (flip-flop: sequence length)");
  hmp->add_option("--p-ignore", h_pi);
  hmp->add_option("--seed", h_seed);
  hmp->add_option("--out", h_out)->required();

  // gradcheck
  auto* grd = app.add_subcommand("gradcheck", "finite-difference checks, JSON report");
  uint64_t gc_seed = 3;
  double gc_tol = 1e-3;
  bool gc_ops_only = false, gc_model_only = false;
  grd->add_option("--seed", gc_seed);
  grd->add_option("--tol", gc_tol);
  grd->add_flag("--ops-only", gc_ops_only);
  grd->add_flag("--model-only", gc_model_only);

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    const Task task = task_from(g_task);
    Rng rng(Rng::derive(g_seed, 0x67656eULL));
    std::vector<TaskSample> samples;
    std::string params;
    if (task == Task::FLIPFLOP) {
      samples = gen_flipflop(g_n, g_seq, g_pi, rng, g_bucket);
      params = "seq_len=" + std::to_string(g_seq) + " p_ignore=" + std::to_string(g_pi);
    } else {
      samples = generate(task, g_n, g_lo, g_hi, 0.0, rng, g_bucket);
      params = "lo=" + std::to_string(g_lo) + " hi=" + std::to_string(g_hi);
    }
    const std::string out = resolve_dir(g_out);
    if (auto dir = std::filesystem::path(out).parent_path(); !dir.empty())
      std::filesystem::create_directories(dir);
    write_corpus(out, task, task_vocab(task), samples, g_seed, params);
    std::cout << "wrote " << samples.size() << " samples to " << out << "\n";
    return 0;
  }

  if (val->parsed()) {
    Corpus c = read_corpus(v_in);
    OracleReport rep = validate_samples(c.task, c.samples);
    std::cout << rep.to_json() << "\n";
    return rep.ok() ? 0 : 3;
  }

  if (trn->parsed()) {
    finish_experiment(t_cfg, t_task, t_variant);
    EvalReport rep = run_cell(t_cfg);
    std::cout << rep.to_json().dump(2) << "\n";
    return 0;
  }

  if (evl->parsed()) {
    finish_experiment(e_cfg, e_task, e_variant);
    e_cfg.apply_defaults();
    Model m;
    Model::LoadInfo meta = m.load(e_ckpt);
    EvalReport rep = evaluate(m, e_cfg);
    rep.steps_trained = meta.step;
    std::cout << rep.to_json().dump(2) << "\n";
    if (!e_out.empty()) {
      std::ofstream f(resolve_dir(e_out));
      f << rep.to_json().dump(2) << "\n";
      if (!f) throw IoError("cannot write " + e_out);
    }
    return 0;
  }

  if (cell->parsed()) {
    std::ifstream f(c_json);
    if (!f) throw IoError("cannot read " + c_json);
    nlohmann::json j;
    f >> j;
    run_cell(ExperimentConfig::from_json(j));
    return 0;
  }

  if (sui->parsed()) {
    SuiteSpec spec;
    auto split = [](const std::string& s) {
      std::vector<std::string> out;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
      return out;
    };
    for (const auto& t : split(s_tasks)) spec.tasks.push_back(task_from(t));
    for (const auto& v : split(s_variants)) spec.variants.push_back(variant_from(v));
    spec.seeds.clear();
    for (const auto& s : split(s_seeds)) spec.seeds.push_back(std::stoull(s));
    spec.base = s_cfg;
    spec.root = resolve_dir(s_root);
    char self[4096];
    const ssize_t n = readlink("/proc/self/exe", self, sizeof self - 1);
    if (n <= 0) throw IoError("cannot resolve own executable path");
    self[n] = 0;
    return run_suite(spec, self, s_jobs);
  }

  if (lmp->parsed()) {
    l_cfg.variant = variant_from(l_variant);
    if (!l_windows.empty()) {
      l_cfg.eval_windows.clear();
      std::stringstream ss(l_windows);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) l_cfg.eval_windows.push_back(std::stoi(item));
    }
    l_cfg.run_dir = resolve_dir(l_cfg.run_dir);
    std::vector<LmProbeRow> rows = lm_probe(l_cfg);
    std::cout << "window,tokens,nll,ppl\n";
    for (const auto& r : rows)
      std::cout << r.window << "," << r.tokens << "," << r.nll << "," << r.ppl << "\n";
    return 0;
  }

  if (mkc->parsed()) {
    const std::string out = resolve_dir(m_out);
    make_lm_corpus(out, m_bytes, m_seed);
    std::cout << "wrote " << std::filesystem::file_size(out) << " bytes to " << out << "\n";
    return 0;
  }

  if (hmp->parsed()) {
    Model m;
    m.load(h_ckpt);
    const Task task = task_from(h_task);
    Rng rng(Rng::derive(h_seed, 0x686d61ULL));
    std::vector<TaskSample> samples =
        task == Task::FLIPFLOP ? gen_flipflop(1, h_len, h_pi, rng, "heat")
                               : generate(task, 1, h_len, h_len, 0.0, rng, "heat");
    const TaskSample& smp = samples[0];
    std::vector<AttentionTrace> traces;
    NoGradGuard ng;
    Rng scratch(1);
    m.forward(smp.tokens, 1, static_cast<int>(smp.tokens.size()), false, scratch, 0, &traces);
    const std::string out = resolve_dir(h_out);
    export_trace(out, traces);
    std::cout << "wrote traces for " << traces.size() << " layers to " << out << "\n";
    return 0;
  }

  if (grd->parsed()) {
    nlohmann::json j;
    bool ok = true;
    if (!gc_model_only) {
      nlohmann::json ops = nlohmann::json::array();
      for (const auto& rep : gradcheck_ops(gc_seed, gc_tol)) {
        ops.push_back(rep.to_json());
        ok = ok && rep.ok;
      }
      j["ops"] = ops;
    }
    if (!gc_ops_only) {
      nlohmann::json models = nlohmann::json::array();
      for (Variant v : {Variant::TRA, Variant::NOPE, Variant::APE, Variant::REL, Variant::ROPE,
                        Variant::LABEL, Variant::FOT}) {
        GradCheckReport rep = gradcheck_model(v, gc_seed, 6, gc_tol);
        models.push_back(rep.to_json());
        ok = ok && rep.ok;
      }
      j["models"] = models;
    }
    j["ok"] = ok;
    std::cout << j.dump(2) << "\n";
    return ok ? 0 : 3;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tra::detail::pin_blas_threads();
  try {
    return run(argc, argv);
  } catch (const tra::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const tra::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
