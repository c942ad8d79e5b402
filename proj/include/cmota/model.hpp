#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cmota/memory.hpp"
#include "cmota/ops.hpp"
#include "cmota/rng.hpp"
#include "cmota/token_sequence.hpp"

namespace cmota::model {

using nn::Mask;
using nn::Tensor;
using tok::TokenSequence;

enum class Topology { None, AllLevel, PartialLevel };
enum class Direction { TextToImage, ImageToText };

inline const char* topology_name(Topology t) {
  switch (t) {
    case Topology::None: return "none";
    case Topology::AllLevel: return "all_level";
    default: return "partial_level";
  }
}
inline Topology topology_from_name(const std::string& s) {
  if (s == "none") return Topology::None;
  if (s == "all_level") return Topology::AllLevel;
  if (s == "partial_level") return Topology::PartialLevel;
  throw std::invalid_argument("unknown topology '" + s + "'");
}

struct ModelConfig {
  int layers = 2;
  int d_model = 64;
  int heads = 4;
  int t_text = 16;   // text token capacity (words + EOS)
  int t_image = 16;  // image grid tokens per frame
  int vocab_text = 0;
  int codebook = 64;
  int t_mem = 1;  // memory rows per state
  int frames = 5; // story length T
  int ffn_mult = 4;
  Topology topology = Topology::PartialLevel;
  bool awm = true;
  bool memory_in_i2t = true;      // fuse the bundle in the image-to-text direction too
  bool memory_single_head = false;  // ablation: single-head memory attention
  double dropout = 0.1;

  void validate() const {
    if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
      throw std::invalid_argument("model: d_model must be divisible by heads");
    if (t_mem < 1) throw std::invalid_argument("model: t_mem must be >= 1");
    if (frames < 2) throw std::invalid_argument("model: frames must be >= 2");
    if (layers < 1 || t_text < 2 || t_image < 1 || vocab_text < tok::kNumSpecials || codebook < 2)
      throw std::invalid_argument("model: invalid sizes");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("model: dropout must be in [0,1)");
  }

  int memory_heads() const { return memory_single_head ? 1 : heads; }
  int max_positions() const { return t_text + t_image + 2; }

  // Layers that carry a memory path (0-based indices).
  std::vector<int> fusion_layers() const {
    std::vector<int> out;
    if (topology == Topology::AllLevel)
      for (int l = 0; l < layers; ++l) out.push_back(l);
    else if (topology == Topology::PartialLevel)
      out.push_back(layers - 1);
    return out;
  }

  // Closed-form trainable parameter count; kept in lockstep with construction
  // and asserted against the runtime count in tests.
  //   embeddings: (V+K)d tokens + (t_text+t_image+2)d positions + 2d segments
  //   per layer:  ln1 2d + attn 4d^2+4d + ln2 2d + ffn 2*mult*d^2+(mult+1)d
  //   final norm: 2d
  //   heads:      (d+1)V + (d+1)K
  //   memory path per fused layer:
  //     t_mem*d (M0) + 4d^2+4d (summarize) + 6d^2+3d (GRU)
  //     + 2d + 4d^2+4d (fuse norm + projections) + [4d^2+4d if AWM]
  int64_t param_count_formula() const {
    const int64_t d = d_model, v = vocab_text, k = codebook;
    const int64_t embeddings = (v + k) * d + static_cast<int64_t>(max_positions()) * d + 2 * d;
    const int64_t per_layer = 4 * d * d + 4 * d + 2LL * ffn_mult * d * d + (ffn_mult + 1) * d + 4 * d;
    const int64_t heads_p = (d + 1) * v + (d + 1) * k;
    const int64_t mem_per_layer = static_cast<int64_t>(t_mem) * d + (4 * d * d + 4 * d) + (6 * d * d + 3 * d) +
                                  (2 * d + 4 * d * d + 4 * d) + (awm ? 4 * d * d + 4 * d : 0);
    return embeddings + layers * per_layer + 2 * d + heads_p +
           static_cast<int64_t>(fusion_layers().size()) * mem_per_layer;
  }

  static ModelConfig desk_preset() { return ModelConfig{}; }
  static ModelConfig paper_preset() {
    ModelConfig c;
    c.layers = 6;
    c.d_model = 512;
    c.heads = 16;
    c.t_text = 80;
    c.t_image = 256;
    c.vocab_text = 64000;
    c.codebook = 8192;
    return c;
  }
};

template <typename T>
struct ParamStore {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  Tensor<T> make(const std::string& name, nn::Shape shape, double stddev, Rng& rng) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
    if (stddev > 0.0)
      for (auto& v : *t.data) v = static_cast<T>(rng.next_normal() * stddev);
    items.emplace_back(name, t);
    return t;
  }
  Tensor<T> make_ones(const std::string& name, nn::Shape shape) {
    Tensor<T> t = Tensor<T>::zeros(std::move(shape), true);
    std::fill(t.data->begin(), t.data->end(), T(1));
    items.emplace_back(name, t);
    return t;
  }
  Tensor<T>* find(const std::string& name) {
    for (auto& [n, t] : items)
      if (n == name) return &t;
    return nullptr;
  }
  int64_t count() const {
    int64_t n = 0;
    for (const auto& [name, t] : items) n += static_cast<int64_t>(t.numel());
    return n;
  }
  void zero_grads() {
    for (auto& [name, t] : items) t.zero_grad();
  }
  double grad_norm() const {
    double acc = 0.0;
    for (const auto& [name, t] : items)
      if (t.grad)
        for (const T g : *t.grad) acc += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(acc);
  }
  void scale_grads(double s) {
    for (auto& [name, t] : items)
      if (t.grad)
        for (T& g : *t.grad) g = static_cast<T>(g * s);
  }
};

// Combined token sequence of one (source, target-prefix) pair.
struct SeqLayout {
  Direction dir = Direction::TextToImage;
  std::vector<int> rows;         // embedding table row per position
  std::vector<int> segments;     // 0 = source, 1 = target
  std::vector<uint8_t> is_text;  // modality tags (SOS/words/EOS text, SOI/patches image)
  int src_len = 0;
  int t_c = 0;
  int first_pred = 0;  // position whose hidden predicts the first target token
  int n_pred = 0;
};

// Per-layer memory bundle for one frame. Undefined tensors mean no fusion
// (frame 1 has no past).
template <typename T>
struct MemoryBundle {
  std::map<int, Tensor<T>> m_tilde;
  bool empty() const {
    for (const auto& [l, m] : m_tilde)
      if (m.defined()) return false;
    return true;
  }
};

struct MemoryInspection {
  struct Record {
    int frame = 0;
    int layer = 0;
    std::string op;
    nn::AttnRecord attn;
  };
  std::vector<Record> records;
};

template <typename T>
struct LayerParams {
  Tensor<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_g, ln2_b, w1, b1, w2, b2;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;                    // [n_pred x target vocab]
  std::vector<Tensor<T>> layer_out;    // post-layer hidden per layer
  Tensor<T> embedded;
};

// Bi-directional multimodal transformer: one trunk, two output heads, shared
// token/position/segment embeddings, optional per-layer memory paths.
template <typename T>
class Transformer {
 public:
  explicit Transformer(const ModelConfig& config, uint64_t init_seed) : cfg_(config) {
    cfg_.validate();
    Rng rng(init_seed);
    const int d = cfg_.d_model;
    const double s = 0.02;
    tok_table_ = params_.make("embed.token", {cfg_.vocab_text + cfg_.codebook, d}, s, rng);
    pos_table_ = params_.make("embed.position", {cfg_.max_positions(), d}, s, rng);
    seg_table_ = params_.make("embed.segment", {2, d}, s, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerParams<T> lp;
      lp.ln1_g = params_.make_ones(p + "ln1.gain", {d});
      lp.ln1_b = params_.make(p + "ln1.bias", {d}, 0.0, rng);
      lp.wq = params_.make(p + "attn.wq", {d, d}, s, rng);
      lp.bq = params_.make(p + "attn.bq", {d}, 0.0, rng);
      lp.wk = params_.make(p + "attn.wk", {d, d}, s, rng);
      lp.bk = params_.make(p + "attn.bk", {d}, 0.0, rng);
      lp.wv = params_.make(p + "attn.wv", {d, d}, s, rng);
      lp.bv = params_.make(p + "attn.bv", {d}, 0.0, rng);
      lp.wo = params_.make(p + "attn.wo", {d, d}, s, rng);
      lp.bo = params_.make(p + "attn.bo", {d}, 0.0, rng);
      lp.ln2_g = params_.make_ones(p + "ln2.gain", {d});
      lp.ln2_b = params_.make(p + "ln2.bias", {d}, 0.0, rng);
      lp.w1 = params_.make(p + "ffn.w1", {d, cfg_.ffn_mult * d}, s, rng);
      lp.b1 = params_.make(p + "ffn.b1", {cfg_.ffn_mult * d}, 0.0, rng);
      lp.w2 = params_.make(p + "ffn.w2", {cfg_.ffn_mult * d, d}, s, rng);
      lp.b2 = params_.make(p + "ffn.b2", {d}, 0.0, rng);
      layers_.push_back(std::move(lp));
    }
    final_ln_g_ = params_.make_ones("final_ln.gain", {d});
    final_ln_b_ = params_.make("final_ln.bias", {d}, 0.0, rng);
    text_head_w_ = params_.make("head.text.w", {d, cfg_.vocab_text}, s, rng);
    text_head_b_ = params_.make("head.text.b", {cfg_.vocab_text}, 0.0, rng);
    image_head_w_ = params_.make("head.image.w", {d, cfg_.codebook}, s, rng);
    image_head_b_ = params_.make("head.image.b", {cfg_.codebook}, 0.0, rng);

    for (int l : cfg_.fusion_layers()) {
      const std::string p = "memory" + std::to_string(l) + ".";
      mem::MemoryPathParams<T> mp;
      mp.m0 = params_.make(p + "m0", {cfg_.t_mem, d}, s, rng);
      mp.sum_q_w = params_.make(p + "sum.q.w", {d, d}, s, rng);
      mp.sum_q_b = params_.make(p + "sum.q.b", {d}, 0.0, rng);
      mp.sum_k_w = params_.make(p + "sum.k.w", {d, d}, s, rng);
      mp.sum_k_b = params_.make(p + "sum.k.b", {d}, 0.0, rng);
      mp.sum_v_w = params_.make(p + "sum.v.w", {d, d}, s, rng);
      mp.sum_v_b = params_.make(p + "sum.v.b", {d}, 0.0, rng);
      mp.sum_o_w = params_.make(p + "sum.o.w", {d, d}, s, rng);
      mp.sum_o_b = params_.make(p + "sum.o.b", {d}, 0.0, rng);
      mp.gru.w_update = params_.make(p + "gru.wz", {d, d}, s, rng);
      mp.gru.u_update = params_.make(p + "gru.uz", {d, d}, s, rng);
      mp.gru.b_update = params_.make(p + "gru.bz", {d}, 0.0, rng);
      mp.gru.w_reset = params_.make(p + "gru.wr", {d, d}, s, rng);
      mp.gru.u_reset = params_.make(p + "gru.ur", {d, d}, s, rng);
      mp.gru.b_reset = params_.make(p + "gru.br", {d}, 0.0, rng);
      mp.gru.w_cand = params_.make(p + "gru.wc", {d, d}, s, rng);
      mp.gru.u_cand = params_.make(p + "gru.uc", {d, d}, s, rng);
      mp.gru.b_cand = params_.make(p + "gru.bc", {d}, 0.0, rng);
      mp.fuse_ln_g = params_.make_ones(p + "fuse.ln.gain", {d});
      mp.fuse_ln_b = params_.make(p + "fuse.ln.bias", {d}, 0.0, rng);
      mp.fuse_q_w = params_.make(p + "fuse.q.w", {d, d}, s, rng);
      mp.fuse_q_b = params_.make(p + "fuse.q.b", {d}, 0.0, rng);
      mp.fuse_k_w = params_.make(p + "fuse.k.w", {d, d}, s, rng);
      mp.fuse_k_b = params_.make(p + "fuse.k.b", {d}, 0.0, rng);
      mp.fuse_v_w = params_.make(p + "fuse.v.w", {d, d}, s, rng);
      mp.fuse_v_b = params_.make(p + "fuse.v.b", {d}, 0.0, rng);
      mp.fuse_o_w = params_.make(p + "fuse.o.w", {d, d}, s, rng);
      mp.fuse_o_b = params_.make(p + "fuse.o.b", {d}, 0.0, rng);
      mp.has_awm = cfg_.awm;
      if (cfg_.awm) {
        mp.awm_q_w = params_.make(p + "awm.q.w", {d, d}, s, rng);
        mp.awm_q_b = params_.make(p + "awm.q.b", {d}, 0.0, rng);
        mp.awm_k_w = params_.make(p + "awm.k.w", {d, d}, s, rng);
        mp.awm_k_b = params_.make(p + "awm.k.b", {d}, 0.0, rng);
        mp.awm_v_w = params_.make(p + "awm.v.w", {d, d}, s, rng);
        mp.awm_v_b = params_.make(p + "awm.v.b", {d}, 0.0, rng);
        mp.awm_o_w = params_.make(p + "awm.o.w", {d, d}, s, rng);
        mp.awm_o_b = params_.make(p + "awm.o.b", {d}, 0.0, rng);
      }
      mem_paths_.emplace(l, std::move(mp));
    }
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }
  const mem::MemoryPathParams<T>& memory_path(int layer) const { return mem_paths_.at(layer); }

  // Embedding row for an image token.
  int image_row(int token) const { return cfg_.vocab_text + token; }

  SeqLayout build_layout(Direction dir, const std::vector<int>& text_tokens,
                         const std::vector<int>& image_tokens) const {
    if (static_cast<int>(text_tokens.size()) > cfg_.t_text)
      throw nn::DimensionError("layout: text exceeds capacity");
    if (static_cast<int>(image_tokens.size()) > cfg_.t_image)
      throw nn::DimensionError("layout: image exceeds capacity");
    for (int z : image_tokens)
      if (z < 0 || z >= cfg_.codebook) throw nn::DimensionError("layout: image token out of codebook range");
    SeqLayout lo;
    lo.dir = dir;
    if (dir == Direction::TextToImage) {
      lo.rows.push_back(tok::kSos);
      lo.is_text.push_back(1);
      for (int w : text_tokens) {
        lo.rows.push_back(w);
        lo.is_text.push_back(1);
      }
      lo.src_len = static_cast<int>(lo.rows.size());
      lo.rows.push_back(tok::kSoi);
      lo.is_text.push_back(0);
      for (int z : image_tokens) {
        lo.rows.push_back(image_row(z));
        lo.is_text.push_back(0);
      }
      lo.first_pred = lo.src_len;
      lo.n_pred = std::min(static_cast<int>(image_tokens.size()) + 1, cfg_.t_image);
    } else {
      lo.rows.push_back(tok::kSoi);
      lo.is_text.push_back(0);
      for (int z : image_tokens) {
        lo.rows.push_back(image_row(z));
        lo.is_text.push_back(0);
      }
      lo.src_len = static_cast<int>(lo.rows.size());
      lo.rows.push_back(tok::kSos);
      lo.is_text.push_back(1);
      for (int w : text_tokens) {
        lo.rows.push_back(w);
        lo.is_text.push_back(1);
      }
      lo.first_pred = lo.src_len;
      lo.n_pred = std::min(static_cast<int>(text_tokens.size()) + 1, cfg_.t_text);
    }
    lo.t_c = static_cast<int>(lo.rows.size());
    lo.segments.assign(static_cast<size_t>(lo.t_c), 1);
    for (int i = 0; i < lo.src_len; ++i) lo.segments[static_cast<size_t>(i)] = 0;
    return lo;
  }

  // Source positions are mutually visible; target positions are causal and
  // see the whole source.
  static Mask trunk_mask(const SeqLayout& lo) {
    Mask m = Mask::all(lo.t_c, lo.t_c, false);
    for (int q = 0; q < lo.t_c; ++q)
      for (int k = 0; k < lo.t_c; ++k)
        if (k < lo.src_len || (q >= lo.src_len && k <= q)) m.at(q, k) = 1;
    return m;
  }

  Tensor<T> embed(const SeqLayout& lo) const {
    Tensor<T> e = nn::embedding(tok_table_, lo.rows);
    std::vector<int> positions(static_cast<size_t>(lo.t_c));
    for (int i = 0; i < lo.t_c; ++i) positions[static_cast<size_t>(i)] = i;
    e = nn::add(e, nn::embedding(pos_table_, positions));
    return nn::add(e, nn::embedding(seg_table_, lo.segments));
  }

  ForwardResult<T> forward(const SeqLayout& lo, const MemoryBundle<T>* bundle = nullptr,
                           bool train_mode = false, Rng* dropout_rng = nullptr) const {
    const double rate = train_mode ? cfg_.dropout : 0.0;
    if (rate > 0.0 && dropout_rng == nullptr)
      throw std::invalid_argument("forward: train mode with dropout needs an rng");
    Mask causal = trunk_mask(lo);
    ForwardResult<T> out;
    Tensor<T> x = embed(lo);
    out.embedded = x;
    for (int l = 0; l < cfg_.layers; ++l) {
      const LayerParams<T>& lp = layers_[static_cast<size_t>(l)];
      Tensor<T> xn = nn::layer_norm(x, lp.ln1_g, lp.ln1_b);
      Tensor<T> q = nn::linear(xn, lp.wq, lp.bq);
      Tensor<T> k = nn::linear(xn, lp.wk, lp.bk);
      Tensor<T> v = nn::linear(xn, lp.wv, lp.bv);
      Tensor<T> att = nn::linear(nn::multi_head_attention(q, k, v, cfg_.heads, &causal), lp.wo, lp.bo);
      if (rate > 0.0) att = nn::dropout(att, rate, *dropout_rng);
      x = nn::add(x, att);

      if (bundle) {
        auto it = bundle->m_tilde.find(l);
        if (it != bundle->m_tilde.end() && it->second.defined()) {
          const mem::MemoryPathParams<T>& mp = mem_paths_.at(l);
          Tensor<T> fn = nn::layer_norm(x, mp.fuse_ln_g, mp.fuse_ln_b);
          Tensor<T> fused = mem::fuse(mp, fn, it->second, causal, cfg_.memory_heads());
          if (rate > 0.0) fused = nn::dropout(fused, rate, *dropout_rng);
          x = nn::add(x, fused);
        }
      }

      Tensor<T> x2 = nn::layer_norm(x, lp.ln2_g, lp.ln2_b);
      Tensor<T> ff = nn::linear(nn::silu(nn::linear(x2, lp.w1, lp.b1)), lp.w2, lp.b2);
      if (rate > 0.0) ff = nn::dropout(ff, rate, *dropout_rng);
      x = nn::add(x, ff);
      out.layer_out.push_back(x);
    }
    Tensor<T> xf = nn::layer_norm(x, final_ln_g_, final_ln_b_);
    Tensor<T> pred = nn::slice_rows(xf, lo.first_pred, lo.first_pred + lo.n_pred);
    out.logits = lo.dir == Direction::TextToImage ? nn::linear(pred, image_head_w_, image_head_b_)
                                                  : nn::linear(pred, text_head_w_, text_head_b_);
    return out;
  }

  // Greedy decoding of exactly t_image tokens; deterministic, argmax ties go
  // to the lowest index.
  TokenSequence generate_image_tokens(const TokenSequence& text, const MemoryBundle<T>* bundle) const {
    nn::NoGradGuard ng;
    std::vector<int> image;
    for (int step = 0; step < cfg_.t_image; ++step) {
      SeqLayout lo = build_layout(Direction::TextToImage, text.valid(), image);
      ForwardResult<T> fwd = forward(lo, bundle);
      image.push_back(argmax_row(fwd.logits, fwd.logits.rows() - 1));
    }
    TokenSequence seq;
    seq.modality = tok::Modality::Image;
    seq.indices = std::move(image);
    seq.length = cfg_.t_image;
    return seq;
  }

  // Greedy decoding until EOS or max_len word tokens; the returned sequence
  // includes the terminating EOS and is padded to capacity.
  TokenSequence generate_text_tokens(const TokenSequence& image, const MemoryBundle<T>* bundle,
                                     int max_len = -1) const {
    nn::NoGradGuard ng;
    if (max_len < 0 || max_len > cfg_.t_text - 1) max_len = cfg_.t_text - 1;
    std::vector<int> words;
    bool saw_eos = false;
    while (static_cast<int>(words.size()) < max_len) {
      SeqLayout lo = build_layout(Direction::ImageToText, words, image.valid());
      ForwardResult<T> fwd = forward(lo, bundle);
      const int next = argmax_row(fwd.logits, fwd.logits.rows() - 1);
      if (next == tok::kEos) {
        saw_eos = true;
        break;
      }
      words.push_back(next);
    }
    (void)saw_eos;
    TokenSequence seq;
    seq.modality = tok::Modality::Text;
    seq.indices.assign(static_cast<size_t>(cfg_.t_text), tok::kPad);
    for (size_t i = 0; i < words.size(); ++i) seq.indices[i] = words[i];
    seq.indices[words.size()] = tok::kEos;
    seq.length = static_cast<int>(words.size()) + 1;
    return seq;
  }

  static int argmax_row(const Tensor<T>& logits, int row) {
    int best = 0;
    T best_v = logits.at(row, 0);
    for (int j = 1; j < logits.cols(); ++j)
      if (logits.at(row, j) > best_v) {
        best_v = logits.at(row, j);
        best = j;
      }
    return best;
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
  Tensor<T> tok_table_, pos_table_, seg_table_;
  Tensor<T> final_ln_g_, final_ln_b_;
  Tensor<T> text_head_w_, text_head_b_, image_head_w_, image_head_b_;
  std::vector<LayerParams<T>> layers_;
  std::map<int, mem::MemoryPathParams<T>> mem_paths_;
};

// Story-unroll memory state: one bank per fused layer, reset at story start.
// Frame indices are 1-based to match the t >= 2 / t >= 3 bundle rules.
template <typename T>
class ContextMemory {
 public:
  explicit ContextMemory(const Transformer<T>& model) : model_(&model) { reset(); }

  void reset() {
    banks_.clear();
    t_ = 1;
    for (int l : model_->config().fusion_layers()) banks_[l] = {};
  }

  int frame() const { return t_; }

  // Bundle for the current frame: nothing at t=1, M_1 at t=2, attentively
  // weighted history (or plain M_{t-1} without AWM) for t >= 3.
  MemoryBundle<T> bundle(MemoryInspection* inspect = nullptr) const {
    MemoryBundle<T> b;
    for (const auto& [l, bank] : banks_) {
      if (t_ == 1) {
        b.m_tilde[l] = Tensor<T>();
        continue;
      }
      const mem::MemoryPathParams<T>& mp = model_->memory_path(l);
      if (t_ == 2 || !mp.has_awm) {
        b.m_tilde[l] = bank.back();
      } else {
        nn::AttnRecord rec;
        b.m_tilde[l] =
            mem::attentive_weight(mp, bank, t_, model_->config().memory_heads(), inspect ? &rec : nullptr);
        if (inspect) inspect->records.push_back({t_, l, "attentive_weight", std::move(rec)});
      }
    }
    return b;
  }

  // Summarize the frame's hidden state over text positions and advance the
  // memory. Must be called once per frame with that frame's t2i forward.
  void step(const ForwardResult<T>& fwd, const SeqLayout& lo, MemoryInspection* inspect = nullptr) {
    Mask text_mask = mem::build_memory_mask(lo.is_text);
    for (auto& [l, bank] : banks_) {
      const mem::MemoryPathParams<T>& mp = model_->memory_path(l);
      const Tensor<T>& m_prev = bank.empty() ? mp.m0 : bank.back();
      nn::AttnRecord rec;
      Tensor<T> s = mem::summarize(mp, m_prev, fwd.layer_out[static_cast<size_t>(l)], text_mask,
                                   model_->config().memory_heads(), inspect ? &rec : nullptr);
      if (inspect) inspect->records.push_back({t_, l, "summarize", std::move(rec)});
      bank.push_back(mem::update(mp, s, m_prev));
    }
    ++t_;
  }

  const std::vector<Tensor<T>>& bank(int layer) const { return banks_.at(layer); }

 private:
  const Transformer<T>* model_;
  std::map<int, std::vector<Tensor<T>>> banks_;
  int t_ = 1;
};

}  // namespace cmota::model
