#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tra/attention.hpp"
#include "tra/ops.hpp"
#include "tra/rng.hpp"

namespace tra {

struct ModelConfig {
  Variant variant = Variant::TRA;
  int n_layers = 2;
  int n_heads = 2;
  int embed_dim = 128;
  int ffn_hidden = 0;  // 0 -> 2*embed_dim
  int vocab_size = 0;
  int max_len = 512;
  double dropout_p = 0.01;
  double rope_theta = 500000.0;
  double init_std = 0.02;
  int label_range = 0;
  bool tie_embeddings = false;

  int ffn() const { return ffn_hidden > 0 ? ffn_hidden : 2 * embed_dim; }
  int head_dim() const { return embed_dim / n_heads; }

  AttentionConfig attn() const {
    AttentionConfig a;
    a.variant = variant;
    a.n_heads = n_heads;
    a.head_dim = head_dim();
    a.embed_dim = embed_dim;
    a.max_len = max_len;
    a.dropout_p = dropout_p;
    a.rope_theta = rope_theta;
    a.label_range = label_range;
    return a;
  }

  void validate() const {
    if (n_layers < 0) throw ConfigError("model config: n_layers");
    if (vocab_size < 1) throw ConfigError("model config: vocab_size");
    if (embed_dim < 1 || n_heads < 1 || embed_dim % n_heads != 0)
      throw ConfigError("model config: embed_dim must be divisible by n_heads");
    attn().validate();
  }

  // presets used by the bundled experiments
  static ModelConfig mini(Variant v, int vocab, int max_len) {
    ModelConfig c;
    c.variant = v;
    c.n_layers = 4;
    c.n_heads = 4;
    c.embed_dim = 256;
    c.vocab_size = vocab;
    c.max_len = max_len;
    return c;
  }
  static ModelConfig probe(Variant v, int vocab, int max_len) {
    ModelConfig c;
    c.variant = v;
    c.n_layers = 2;
    c.n_heads = 1;
    c.embed_dim = 64;
    c.vocab_size = vocab;
    c.max_len = max_len;
    return c;
  }
  static ModelConfig desk(Variant v, int vocab, int max_len) {
    ModelConfig c;
    c.variant = v;
    c.n_layers = 2;
    c.n_heads = 2;
    c.embed_dim = 128;
    c.vocab_size = vocab;
    c.max_len = max_len;
    return c;
  }

  nlohmann::json to_json() const {
    return {{"variant", variant_name(variant)},
            {"n_layers", n_layers},
            {"n_heads", n_heads},
            {"embed_dim", embed_dim},
            {"ffn_hidden", ffn_hidden},
            {"vocab_size", vocab_size},
            {"max_len", max_len},
            {"dropout_p", dropout_p},
            {"rope_theta", rope_theta},
            {"init_std", init_std},
            {"label_range", label_range},
            {"tie_embeddings", tie_embeddings}};
  }
  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.variant = variant_from(j.at("variant").get<std::string>());
    c.n_layers = j.at("n_layers").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.embed_dim = j.at("embed_dim").get<int>();
    c.ffn_hidden = j.value("ffn_hidden", 0);
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.dropout_p = j.value("dropout_p", 0.01);
    c.rope_theta = j.value("rope_theta", 500000.0);
    c.init_std = j.value("init_std", 0.02);
    c.label_range = j.value("label_range", 0);
    c.tie_embeddings = j.value("tie_embeddings", false);
    return c;
  }
};

template <class T>
struct FfnT {
  TensorT<T> w_gate, w_up, w_down;

  void init(int e, int f, Rng& rng, T std) {
    w_gate = TensorT<T>::randn({e, f}, rng, std);
    w_up = TensorT<T>::randn({e, f}, rng, std);
    w_down = TensorT<T>::randn({f, e}, rng, std);
    for (TensorT<T>* w : {&w_gate, &w_up, &w_down}) w->req_grad();
  }

  TensorT<T> forward(const TensorT<T>& x, double p, bool training, uint64_t seed, uint64_t site) {
    TensorT<T> h = mul(silu(matmul(x, w_gate)), matmul(x, w_up));
    h = dropout(h, p, training, seed, site);
    return matmul(h, w_down);
  }
};

template <class T>
struct BlockT {
  TensorT<T> ln1_gain, ln2_gain;
  AttentionLayerT<T> attn;
  FfnT<T> ffn;
};

template <class T>
class ModelT {
 public:
  ModelConfig cfg;

  void init(const ModelConfig& c, uint64_t seed) {
    c.validate();
    cfg = c;
    Rng rng(Rng::derive(seed, 0x6d6f64656cULL));  // "model"
    const int e = cfg.embed_dim;
    tok_emb_ = TensorT<T>::randn({cfg.vocab_size, e}, rng, static_cast<T>(cfg.init_std));
    tok_emb_.req_grad();
    if (cfg.variant == Variant::APE) {
      pos_tab_ = TensorT<T>::randn({cfg.max_len, e}, rng, T(0.02));
      pos_tab_.req_grad();
      ape_ext_seed_ = rng.next_u64();
    } else if (cfg.variant == Variant::LABEL) {
      if (cfg.label_range < cfg.max_len)
        throw ConfigError("label_range must cover max_len");
      pos_tab_ = TensorT<T>::randn({cfg.label_range, e}, rng, T(0.02));
      pos_tab_.req_grad();
    }
    blocks_.clear();
    blocks_.resize(cfg.n_layers);
    for (auto& blk : blocks_) {
      blk.ln1_gain = TensorT<T>::full({e}, T(1));
      blk.ln2_gain = TensorT<T>::full({e}, T(1));
      blk.ln1_gain.req_grad();
      blk.ln2_gain.req_grad();
      blk.attn.init(cfg.attn(), rng, static_cast<T>(cfg.init_std));
      blk.ffn.init(e, cfg.ffn(), rng, static_cast<T>(cfg.init_std));
    }
    final_gain_ = TensorT<T>::full({e}, T(1));
    final_gain_.req_grad();
    if (!cfg.tie_embeddings) {
      head_ = TensorT<T>::randn({e, cfg.vocab_size}, rng, static_cast<T>(cfg.init_std));
      head_.req_grad();
    }
    build_registry();
  }

  // tokens: row-major ids [b, s]. traces, when given, receives one entry per
  // layer for batch element 0.
  TensorT<T> forward(const std::vector<int>& tokens, int b, int s, bool training, Rng& rng,
                     uint64_t step, std::vector<AttentionTrace>* traces = nullptr) {
    if (static_cast<std::size_t>(b) * s != tokens.size())
      throw ConfigError("model forward: token buffer does not match [b,s]");
    if (training && (cfg.variant == Variant::APE || cfg.variant == Variant::LABEL) &&
        s > table_rows())
      throw ConfigError("sequence length " + std::to_string(s) +
                        " exceeds position table for variant " + variant_name(cfg.variant));
    if (traces) traces->assign(cfg.n_layers, AttentionTrace{});

    TensorT<T> x = embedding(tok_emb_, tokens, {b, s});
    if (cfg.variant == Variant::APE) {
      x = add(x, positional_ape(b, s));
    } else if (cfg.variant == Variant::LABEL) {
      x = add(x, positional_label(b, s, training, rng));
    }

    const uint64_t drop_seed = mix64(seed_for_dropout_ ^ 0x64726f70ULL);
    for (int l = 0; l < cfg.n_layers; ++l) {
      auto& blk = blocks_[l];
      AttentionTrace* tr = traces ? &(*traces)[l] : nullptr;
      TensorT<T> a = blk.attn.forward(rmsnorm(x, &blk.ln1_gain), cfg.attn(), training, drop_seed,
                                      site(step, l, 0), tr);
      x = add(x, a);
      TensorT<T> f =
          blk.ffn.forward(rmsnorm(x, &blk.ln2_gain), cfg.dropout_p, training, drop_seed,
                          site(step, l, 1));
      x = add(x, f);
    }
    x = rmsnorm(x, &final_gain_);
    return cfg.tie_embeddings ? matmul_t(x, tok_emb_) : matmul(x, head_);
  }

  std::vector<std::pair<std::string, TensorT<T>>>& params() { return registry_; }

  std::vector<TensorT<T>> param_tensors() {
    std::vector<TensorT<T>> out;
    for (auto& [name, t] : registry_) out.push_back(t);
    return out;
  }

  int64_t count_params() const {
    int64_t n = 0;
    for (const auto& [name, t] : registry_) n += static_cast<int64_t>(t.numel());
    return n;
  }

  void set_dropout_seed(uint64_t s) { seed_for_dropout_ = s; }

  // ----- checkpoint: magic, config json, rng state, named f32 blobs -----
  void save(const std::string& path, uint64_t rng_seed, uint64_t rng_counter,
            int64_t step) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint " + path);
    f.write("TRACKPT1", 8);
    nlohmann::json meta = {{"config", cfg.to_json()},
                           {"rng_seed", rng_seed},
                           {"rng_counter", rng_counter},
                           {"step", step},
                           {"ape_ext_seed", ape_ext_seed_}};
    const std::string js = meta.dump();
    write_u64(f, js.size());
    f.write(js.data(), static_cast<std::streamsize>(js.size()));
    write_u64(f, registry_.size());
    for (const auto& [name, t] : registry_) {
      write_u64(f, name.size());
      f.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u64(f, t.shape.size());
      for (int d : t.shape) write_u64(f, static_cast<uint64_t>(d));
      std::vector<float> buf(t.numel());
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>((*t.data)[i]);
      f.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw IoError("short write on checkpoint " + path);
  }

  struct LoadInfo {
    uint64_t rng_seed = 0, rng_counter = 0;
    int64_t step = 0;
  };

  LoadInfo load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read checkpoint " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::string(magic, 8) != "TRACKPT1")
      throw IoError("bad checkpoint magic in " + path);
    const uint64_t jlen = read_u64(f);
    std::string js(jlen, '\0');
    f.read(js.data(), static_cast<std::streamsize>(jlen));
    nlohmann::json meta = nlohmann::json::parse(js);
    init(ModelConfig::from_json(meta.at("config")), 0);
    ape_ext_seed_ = meta.value("ape_ext_seed", uint64_t(0));
    const uint64_t n = read_u64(f);
    if (n != registry_.size()) throw IoError("checkpoint parameter count mismatch");
    for (auto& [name, t] : registry_) {
      const uint64_t nlen = read_u64(f);
      std::string got(nlen, '\0');
      f.read(got.data(), static_cast<std::streamsize>(nlen));
      if (got != name) throw IoError("checkpoint parameter order mismatch: " + got + " vs " + name);
      const uint64_t ndim = read_u64(f);
      std::vector<int> shape(ndim);
      for (auto& d : shape) d = static_cast<int>(read_u64(f));
      if (shape != t.shape) throw IoError("checkpoint shape mismatch for " + name);
      std::vector<float> buf(t.numel());
      f.read(reinterpret_cast<char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
      for (std::size_t i = 0; i < buf.size(); ++i) (*t.data)[i] = static_cast<T>(buf[i]);
    }
    if (!f) throw IoError("truncated checkpoint " + path);
    LoadInfo info;
    info.rng_seed = meta.value("rng_seed", uint64_t(0));
    info.rng_counter = meta.value("rng_counter", uint64_t(0));
    info.step = meta.value("step", int64_t(0));
    return info;
  }

 private:
  TensorT<T> tok_emb_, pos_tab_, final_gain_, head_;
  std::vector<BlockT<T>> blocks_;
  std::vector<std::pair<std::string, TensorT<T>>> registry_;
  uint64_t ape_ext_seed_ = 0;
  uint64_t seed_for_dropout_ = 0;

  int table_rows() const { return pos_tab_.data ? pos_tab_.shape[0] : 0; }

  static uint64_t site(uint64_t step, int layer, int which) {
    return (step << 9) | (static_cast<uint64_t>(layer) << 1) | static_cast<uint64_t>(which);
  }

  TensorT<T> positional_ape(int b, int s) {
    std::vector<int> ids(static_cast<std::size_t>(b) * s);
    for (int bi = 0; bi < b; ++bi)
      for (int t = 0; t < s; ++t) ids[static_cast<std::size_t>(bi) * s + t] = t;
    if (s <= cfg.max_len) return embedding(pos_tab_, ids, {b, s});
    // OOD evaluation: extend with rows drawn from the init-time seed but
    // never trained, so degradation is measurable instead of a crash
    NoGradGuard ng;
    const int e = cfg.embed_dim;
    TensorT<T> ext = TensorT<T>::zeros({s, e});
    std::copy(pos_tab_.data->begin(), pos_tab_.data->end(), ext.data->begin());
    Rng rng(ape_ext_seed_);
    for (std::size_t i = static_cast<std::size_t>(cfg.max_len) * e;
         i < ext.data->size(); ++i)
      (*ext.data)[i] = static_cast<T>(rng.next_normal() * 0.02);
    return embedding(ext, ids, {b, s});
  }

  TensorT<T> positional_label(int b, int s, bool training, Rng& rng) {
    std::vector<int> ids(static_cast<std::size_t>(b) * s);
    for (int bi = 0; bi < b; ++bi) {
      std::vector<int> pos;
      if (training) {
        Rng child = rng.child(rng.next_u64());
        pos = label_positions(s, cfg.label_range, child);
      } else {
        pos = label_positions_eval(s, cfg.label_range);
      }
      std::copy(pos.begin(), pos.end(), ids.begin() + static_cast<std::size_t>(bi) * s);
    }
    return embedding(pos_tab_, ids, {b, s});
  }

  void build_registry() {
    registry_.clear();
    registry_.emplace_back("tok_emb", tok_emb_);
    if (pos_tab_.data) registry_.emplace_back("pos_tab", pos_tab_);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l);
      registry_.emplace_back(p + ".ln1", blocks_[l].ln1_gain);
      blocks_[l].attn.collect(p + ".attn", registry_);
      registry_.emplace_back(p + ".ln2", blocks_[l].ln2_gain);
      registry_.emplace_back(p + ".ffn.w_gate", blocks_[l].ffn.w_gate);
      registry_.emplace_back(p + ".ffn.w_up", blocks_[l].ffn.w_up);
      registry_.emplace_back(p + ".ffn.w_down", blocks_[l].ffn.w_down);
    }
    registry_.emplace_back("final_ln", final_gain_);
    if (head_.data) registry_.emplace_back("head", head_);
  }

  static void write_u64(std::ofstream& f, uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    f.write(reinterpret_cast<const char*>(buf), 8);
  }
  static uint64_t read_u64(std::ifstream& f) {
    unsigned char buf[8];
    f.read(reinterpret_cast<char*>(buf), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
    return v;
  }
};

using Model = ModelT<float>;

}  // namespace tra
