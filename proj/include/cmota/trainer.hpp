#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "cmota/codebook.hpp"
#include "cmota/model.hpp"
#include "cmota/storyworld.hpp"
#include "cmota/vocab.hpp"

namespace cmota::train {

using model::ContextMemory;
using model::Direction;
using model::MemoryBundle;
using model::SeqLayout;
using model::Transformer;
using nn::Tensor;
using tok::TokenSequence;

enum class AugMode { None, Offline, Online };

inline const char* aug_name(AugMode m) {
  switch (m) {
    case AugMode::None: return "none";
    case AugMode::Offline: return "offline";
    default: return "online";
  }
}
inline AugMode aug_from_name(const std::string& s) {
  if (s == "none") return AugMode::None;
  if (s == "offline") return AugMode::Offline;
  if (s == "online") return AugMode::Online;
  throw std::invalid_argument("unknown augmentation mode '" + s + "'");
}

struct TrainConfig {
  double lambda1 = 1.0;   // image-to-text loss weight
  double lambda2 = 0.5;   // pseudo-text loss weight
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  double lr = 3e-4;               // flat rate for the desk scale
  bool lr_scale_by_batch = false;  // paper rule: lr * batch_size
  int epochs = 12;
  int batch_size = 8;
  AugMode augmentation = AugMode::None;
  int warmup_epochs = 3;  // epochs whose pseudo-texts are discarded
  uint64_t seed = 0;
  double grad_clip = 1.0;
  int alternation = 1;  // optimizer micro-steps per batch: 1 joint, 2 alternating t2i / i2t
  bool bidirectional = true;

  double effective_lr() const { return lr_scale_by_batch ? lr * batch_size : lr; }
  void validate() const {
    if (lambda1 < 0 || lambda2 < 0) throw std::invalid_argument("train: loss weights must be >= 0");
    if (warmup_epochs < 0) throw std::invalid_argument("train: warmup_epochs must be >= 0");
    if (batch_size < 1 || epochs < 0) throw std::invalid_argument("train: bad batch/epoch sizes");
    if (alternation != 1 && alternation != 2) throw std::invalid_argument("train: alternation must be 1 or 2");
    if (augmentation != AugMode::None && !bidirectional)
      throw std::invalid_argument("train: text augmentation requires bidirectional training");
  }
};

struct EncodedFrame {
  TokenSequence text;
  TokenSequence image;
};
struct EncodedStory {
  int id = -1;
  std::vector<EncodedFrame> frames;
};

inline std::vector<EncodedStory> encode_stories(const std::vector<world::StorySample>& stories,
                                                const tok::Vocab& vocab, const tok::Codebook& codebook,
                                                int t_text) {
  std::vector<EncodedStory> out;
  out.reserve(stories.size());
  for (const auto& s : stories) {
    EncodedStory es;
    es.id = s.id;
    for (const auto& f : s.frames)
      es.frames.push_back({vocab.encode(f.sentence, t_text), codebook.quantize(f.image)});
    out.push_back(std::move(es));
  }
  return out;
}

struct LossBreakdown {
  double t2i = 0.0, i2t = 0.0, pt2i = 0.0, total = 0.0;
  double additivity_gap(double lambda1, double lambda2) const {
    return std::abs(total - (t2i + lambda1 * i2t + lambda2 * pt2i));
  }
};

struct StepRecord {
  int64_t step = 0;
  int epoch = 0;
  LossBreakdown loss;
  double lr = 0.0;
  double tokens_per_s = 0.0;
};
using MetricsSink = std::function<void(const StepRecord&)>;

// ---------------------------------------------------------------------------
// AdamW: decoupled weight decay, bias-corrected moments
// ---------------------------------------------------------------------------

struct AdamWConfig {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.95, eps = 1e-8, weight_decay = 1e-2;
};

template <typename T>
void adamw_step(Tensor<T>& param, const std::vector<T>& grad, std::vector<T>& m, std::vector<T>& v,
                int64_t step_count, const AdamWConfig& cfg) {
  if (grad.size() != param.numel() || m.size() != param.numel() || v.size() != param.numel())
    throw nn::DimensionError("adamw_step: state shapes must match the parameter");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
  for (size_t i = 0; i < grad.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * g;
    const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double mhat = mi / bc1;
    const double vhat = vi / bc2;
    const double p = static_cast<double>((*param.data)[i]);
    (*param.data)[i] = static_cast<T>(p - cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * p));
  }
}

template <typename T>
class AdamW {
 public:
  void ensure(const model::ParamStore<T>& store) {
    if (!m_.empty()) return;
    for (const auto& [name, t] : store.items) {
      m_.emplace_back(t.numel(), T(0));
      v_.emplace_back(t.numel(), T(0));
    }
  }
  void step(model::ParamStore<T>& store, const AdamWConfig& cfg) {
    ensure(store);
    ++step_count_;
    for (size_t i = 0; i < store.items.size(); ++i) {
      Tensor<T>& p = store.items[i].second;
      static const std::vector<T> kEmpty;
      const std::vector<T>& g = p.grad ? *p.grad : kEmpty;
      if (g.empty()) continue;
      adamw_step(p, g, m_[i], v_[i], step_count_, cfg);
    }
  }
  int64_t step_count() const { return step_count_; }
  void set_step_count(int64_t n) { step_count_ = n; }
  std::vector<std::vector<T>>& moments1() { return m_; }
  std::vector<std::vector<T>>& moments2() { return v_; }

 private:
  std::vector<std::vector<T>> m_, v_;
  int64_t step_count_ = 0;
};

// ---------------------------------------------------------------------------
// story losses with memory unroll
// ---------------------------------------------------------------------------

// Which loss terms to build (alternating micro-steps select subsets; the
// unroll itself always runs the t2i forwards because the memory depends on
// them).
struct LossSelect {
  bool t2i = true;
  bool i2t = true;
  bool pt2i = true;
};

template <typename T>
struct StoryLossGraph {
  Tensor<T> t2i, i2t, pt2i;  // per-story token-summed NLL, undefined when unused
  int frames = 0;
};

// Teacher-forced Eq. 1 / Eq. 3 terms for one story. Memory propagates across
// frames; the per-frame memory update reads the t2i forward's hidden states
// (text positions only), so it is independent of image token content.
template <typename T>
StoryLossGraph<T> story_losses(const Transformer<T>& model, const EncodedStory& story, bool train_mode,
                               Rng* dropout_rng, const LossSelect& select,
                               const std::vector<TokenSequence>* pseudo_texts = nullptr) {
  StoryLossGraph<T> out;
  out.frames = static_cast<int>(story.frames.size());
  ContextMemory<T> memory(model);
  auto accumulate = [](Tensor<T>& acc, Tensor<T> term) {
    acc = acc.defined() ? nn::add(acc, term) : term;
  };
  for (size_t t = 0; t < story.frames.size(); ++t) {
    const EncodedFrame& frame = story.frames[t];
    MemoryBundle<T> bundle = memory.bundle();
    const std::vector<int> text = frame.text.valid();
    const std::vector<int> image = frame.image.indices;

    SeqLayout t2i_layout = model.build_layout(Direction::TextToImage, text, image);
    auto t2i_fwd = model.forward(t2i_layout, &bundle, train_mode, dropout_rng);
    if (select.t2i) accumulate(out.t2i, nn::cross_entropy(t2i_fwd.logits, image, nn::Reduction::Sum));
    memory.step(t2i_fwd, t2i_layout);

    if (select.i2t) {
      // input text prefix w1..wm; targets w1..wm,EOS
      std::vector<int> prefix(text.begin(), text.end() - 1);
      SeqLayout i2t_layout = model.build_layout(Direction::ImageToText, prefix, image);
      auto i2t_fwd = model.forward(i2t_layout, model.config().memory_in_i2t ? &bundle : nullptr, train_mode,
                                   dropout_rng);
      accumulate(out.i2t, nn::cross_entropy(i2t_fwd.logits, text, nn::Reduction::Sum));
    }

    if (select.pt2i && pseudo_texts) {
      const TokenSequence& pt = (*pseudo_texts)[t];
      if (pt.length == 0) throw std::runtime_error("missing pseudo-text for frame " + std::to_string(t));
      SeqLayout p_layout = model.build_layout(Direction::TextToImage, pt.valid(), image);
      auto p_fwd = model.forward(p_layout, &bundle, train_mode, dropout_rng);
      accumulate(out.pt2i, nn::cross_entropy(p_fwd.logits, image, nn::Reduction::Sum));
    }
  }
  return out;
}

// Greedy pseudo-text for each frame of a story, memory unrolled from the
// ground-truth images' t2i passes; produced with gradients disabled so the
// result is a detached constant.
template <typename T>
std::vector<TokenSequence> make_pseudo_texts(const Transformer<T>& model, const EncodedStory& story) {
  nn::NoGradGuard ng;
  std::vector<TokenSequence> out;
  ContextMemory<T> memory(model);
  for (const EncodedFrame& frame : story.frames) {
    MemoryBundle<T> bundle = memory.bundle();
    out.push_back(model.generate_text_tokens(frame.image, &bundle));
    SeqLayout lo = model.build_layout(Direction::TextToImage, frame.text.valid(), frame.image.indices);
    auto fwd = model.forward(lo, &bundle);
    memory.step(fwd, lo);
  }
  return out;
}

// One fixed pseudo-text per image from a frozen captioner.
template <typename T>
std::vector<std::vector<TokenSequence>> offline_augment(const Transformer<T>& captioner,
                                                        const std::vector<EncodedStory>& data) {
  std::vector<std::vector<TokenSequence>> out;
  out.reserve(data.size());
  for (const auto& story : data) out.push_back(make_pseudo_texts(captioner, story));
  return out;
}

// ---------------------------------------------------------------------------
// trainer
// ---------------------------------------------------------------------------

template <typename T>
class Trainer {
 public:
  Trainer(Transformer<T>& model, const TrainConfig& cfg)
      : model_(model), cfg_(cfg), rng_(seed_for(cfg.seed, 0xD407)) {
    cfg_.validate();
    opt_.ensure(model_.params());
  }

  const TrainConfig& config() const { return cfg_; }
  Transformer<T>& model() { return model_; }
  AdamW<T>& optimizer() { return opt_; }
  Rng& rng() { return rng_; }
  int epoch() const { return epoch_; }
  int batch_index() const { return batch_index_; }
  int64_t global_step() const { return global_step_; }
  void restore_progress(int epoch, int batch_index, int64_t step) {
    epoch_ = epoch;
    batch_index_ = batch_index;
    global_step_ = step;
  }
  std::vector<std::vector<TokenSequence>>& pseudo_texts() { return pseudo_texts_; }
  void set_offline_texts(std::vector<std::vector<TokenSequence>> texts) { offline_texts_ = std::move(texts); }
  const std::vector<std::vector<TokenSequence>>& offline_texts() const { return offline_texts_; }

  bool augmentation_active() const {
    return cfg_.augmentation != AugMode::None && epoch_ >= cfg_.warmup_epochs;
  }

  // Deterministic per-epoch permutation, independent of the trainer RNG so a
  // resumed run can reconstruct it.
  std::vector<int> epoch_order(size_t n) const {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng perm_rng(seed_for(cfg_.seed ^ 0x9E3779B97F4A7C15ull, static_cast<uint64_t>(epoch_)));
    perm_rng.shuffle(order.begin(), order.end());
    return order;
  }

  bool done() const { return epoch_ >= cfg_.epochs; }

  // Runs one optimizer step (or one alternation group). Returns false when
  // training is complete.
  bool step_batch(const std::vector<EncodedStory>& data, const MetricsSink& sink = {}) {
    if (done() || data.empty()) return false;
    const auto t0 = std::chrono::steady_clock::now();
    if (batch_index_ == 0) prepare_epoch(data);

    const std::vector<int> order = epoch_order(data.size());
    const size_t begin = static_cast<size_t>(batch_index_) * cfg_.batch_size;
    const size_t end = std::min(begin + cfg_.batch_size, data.size());
    std::vector<int> batch(order.begin() + begin, order.begin() + end);

    LossBreakdown breakdown;
    size_t tokens = 0;
    if (cfg_.alternation == 1) {
      LossSelect sel;
      sel.i2t = cfg_.bidirectional;
      sel.pt2i = augmentation_active();
      breakdown = run_micro_step(data, batch, sel, true, true, tokens);
    } else {
      LossSelect a;
      a.i2t = false;
      a.pt2i = augmentation_active();
      LossBreakdown ba = run_micro_step(data, batch, a, true, false, tokens);
      LossSelect b;
      b.t2i = false;
      b.pt2i = false;
      b.i2t = cfg_.bidirectional;
      LossBreakdown bb = run_micro_step(data, batch, b, false, true, tokens);
      breakdown.t2i = ba.t2i;
      breakdown.pt2i = ba.pt2i;
      breakdown.i2t = bb.i2t;
      breakdown.total = ba.total + bb.total;
    }

    ++global_step_;
    ++batch_index_;
    if (end >= data.size()) {
      batch_index_ = 0;
      ++epoch_;
    }
    if (sink) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      StepRecord rec;
      rec.step = global_step_;
      rec.epoch = epoch_;
      rec.loss = breakdown;
      rec.lr = cfg_.effective_lr();
      rec.tokens_per_s = secs > 0 ? static_cast<double>(tokens) / secs : 0.0;
      sink(rec);
    }
    return !done();
  }

  void run(const std::vector<EncodedStory>& data, const MetricsSink& sink = {}) {
    while (step_batch(data, sink)) {
    }
  }

 private:
  void prepare_epoch(const std::vector<EncodedStory>& data) {
    pseudo_texts_.assign(data.size(), {});
    if (!augmentation_active()) return;
    if (cfg_.augmentation == AugMode::Online) {
      // Fig.-5 style: regenerate from the epoch-start snapshot, every epoch.
      for (size_t i = 0; i < data.size(); ++i) pseudo_texts_[i] = make_pseudo_texts(model_, data[i]);
    } else {
      if (offline_texts_.size() != data.size())
        throw std::runtime_error("offline augmentation requested but no captioner texts are loaded");
      pseudo_texts_ = offline_texts_;
    }
  }

  LossBreakdown run_micro_step(const std::vector<EncodedStory>& data, const std::vector<int>& batch,
                               const LossSelect& sel, bool include_t2i_weights, bool include_i2t_weight,
                               size_t& tokens) {
    model_.params().zero_grads();
    Tensor<T> t2i_sum, i2t_sum, pt2i_sum;
    int frames = 0;
    auto accumulate = [](Tensor<T>& acc, const Tensor<T>& term) {
      if (term.defined()) acc = acc.defined() ? nn::add(acc, term) : term;
    };
    for (int ix : batch) {
      const EncodedStory& story = data[static_cast<size_t>(ix)];
      const std::vector<TokenSequence>* pt =
          sel.pt2i && static_cast<size_t>(ix) < pseudo_texts_.size() && !pseudo_texts_[static_cast<size_t>(ix)].empty()
              ? &pseudo_texts_[static_cast<size_t>(ix)]
              : nullptr;
      LossSelect s = sel;
      s.pt2i = pt != nullptr;
      StoryLossGraph<T> g = story_losses(model_, story, true, &rng_, s, pt);
      accumulate(t2i_sum, g.t2i);
      accumulate(i2t_sum, g.i2t);
      accumulate(pt2i_sum, g.pt2i);
      frames += g.frames;
      for (const auto& f : story.frames) tokens += static_cast<size_t>(f.text.length + f.image.length);
    }
    // sum over tokens within a frame, mean over frames in the batch
    const T inv_frames = T(1) / static_cast<T>(frames);
    Tensor<T> t2i_mean = t2i_sum.defined() ? nn::scale(t2i_sum, inv_frames) : Tensor<T>();
    Tensor<T> i2t_mean = i2t_sum.defined() ? nn::scale(i2t_sum, inv_frames) : Tensor<T>();
    Tensor<T> pt2i_mean = pt2i_sum.defined() ? nn::scale(pt2i_sum, inv_frames) : Tensor<T>();

    Tensor<T> total = Tensor<T>::scalar(T(0));
    if (include_t2i_weights && t2i_mean.defined()) total = nn::add(total, t2i_mean);
    if (include_i2t_weight && i2t_mean.defined())
      total = nn::add_scaled(total, static_cast<T>(cfg_.lambda1), i2t_mean);
    if (include_t2i_weights && pt2i_mean.defined())
      total = nn::add_scaled(total, static_cast<T>(cfg_.lambda2), pt2i_mean);

    nn::backward(total);
    if (cfg_.grad_clip > 0.0) {
      const double norm = model_.params().grad_norm();
      if (norm > cfg_.grad_clip) model_.params().scale_grads(cfg_.grad_clip / norm);
    }
    AdamWConfig oc{cfg_.effective_lr(), cfg_.beta1, cfg_.beta2, cfg_.eps, cfg_.weight_decay};
    opt_.step(model_.params(), oc);

    LossBreakdown b;
    b.t2i = t2i_mean.defined() ? static_cast<double>(t2i_mean.item()) : 0.0;
    b.i2t = i2t_mean.defined() ? static_cast<double>(i2t_mean.item()) : 0.0;
    b.pt2i = pt2i_mean.defined() ? static_cast<double>(pt2i_mean.item()) : 0.0;
    b.total = static_cast<double>(total.item());
    return b;
  }

  Transformer<T>& model_;
  TrainConfig cfg_;
  AdamW<T> opt_;
  Rng rng_;
  int epoch_ = 0;
  int batch_index_ = 0;
  int64_t global_step_ = 0;
  std::vector<std::vector<TokenSequence>> pseudo_texts_;
  std::vector<std::vector<TokenSequence>> offline_texts_;
};

// ---------------------------------------------------------------------------
// evaluation-side unrolls
// ---------------------------------------------------------------------------

// Fraction of image-token positions predicted correctly under teacher forcing
// (eval mode, memory unrolled).
template <typename T>
double teacher_forced_image_accuracy(const Transformer<T>& model, const std::vector<EncodedStory>& data) {
  nn::NoGradGuard ng;
  size_t correct = 0, total = 0;
  for (const auto& story : data) {
    ContextMemory<T> memory(model);
    for (const auto& frame : story.frames) {
      MemoryBundle<T> bundle = memory.bundle();
      SeqLayout lo = model.build_layout(Direction::TextToImage, frame.text.valid(), frame.image.indices);
      auto fwd = model.forward(lo, &bundle);
      for (int r = 0; r < fwd.logits.rows(); ++r) {
        if (Transformer<T>::argmax_row(fwd.logits, r) == frame.image.indices[static_cast<size_t>(r)]) ++correct;
        ++total;
      }
      memory.step(fwd, lo);
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

struct StoryGeneration {
  std::vector<TokenSequence> images;    // generated image token grids
  std::vector<TokenSequence> captions;  // greedy captions of the ground-truth images
};

// Free-running generation of a story: images decoded greedily per frame with
// the memory unrolled alongside. The memory update only reads text positions,
// so it is identical whether the frame's image tokens are generated or
// ground truth.
template <typename T>
StoryGeneration generate_story(const Transformer<T>& model, const EncodedStory& story, bool caption_images,
                               model::MemoryInspection* inspect = nullptr) {
  nn::NoGradGuard ng;
  StoryGeneration out;
  ContextMemory<T> memory(model);
  for (const auto& frame : story.frames) {
    MemoryBundle<T> bundle = memory.bundle(inspect);
    out.images.push_back(model.generate_image_tokens(frame.text, &bundle));
    if (caption_images) out.captions.push_back(model.generate_text_tokens(frame.image, &bundle));
    SeqLayout lo =
        model.build_layout(Direction::TextToImage, frame.text.valid(), out.images.back().indices);
    auto fwd = model.forward(lo, &bundle);
    memory.step(fwd, lo, inspect);
  }
  return out;
}

}  // namespace cmota::train
