#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cmota/config.hpp"
#include "cmota/eval.hpp"
#include "cmota/trainer.hpp"

namespace cmota::pipeline {

// Resolves the pieces of a run that depend on the world: the closed
// vocabulary (built from the full template sweep so held-out paraphrases are
// never out-of-vocabulary) and the patch codebook (fitted on the atlas
// renders, which cover every patch the renderer can produce).
inline tok::Vocab build_world_vocab(const world::WorldConfig& wcfg) {
  return tok::Vocab::build(world::all_template_realizations(wcfg));
}

inline tok::Codebook fit_world_codebook(const io::RunConfig& cfg) {
  return tok::Codebook::fit(world::atlas_renders(cfg.world), cfg.codebook_k, cfg.codebook_patch,
                            seed_for(cfg.seed, 0xC0DE));
}

// Fills the config fields that are derived from artifacts rather than chosen.
inline io::RunConfig resolve(io::RunConfig cfg, const tok::Vocab& vocab, const tok::Codebook& codebook) {
  if (cfg.model.vocab_text == 0) cfg.model.vocab_text = vocab.size();
  cfg.model.codebook = codebook.size();
  cfg.train.seed = cfg.seed;
  cfg.model.validate();
  cfg.validate();
  return cfg;
}

// Generates every frame of every story and evaluates against ground truth.
template <typename T>
metrics::MetricReport evaluate_model(const model::Transformer<T>& m,
                                     const std::vector<world::StorySample>& stories, const tok::Vocab& vocab,
                                     const tok::Codebook& codebook, const world::WorldConfig& wcfg,
                                     bool with_captions = true) {
  std::vector<train::EncodedStory> encoded = train::encode_stories(stories, vocab, codebook, m.config().t_text);
  std::vector<std::vector<img::ImageF64>> generated;
  std::vector<std::vector<std::string>> captions;
  for (size_t s = 0; s < encoded.size(); ++s) {
    train::StoryGeneration gen = train::generate_story(m, encoded[s], with_captions);
    std::vector<img::ImageF64> images;
    std::vector<std::string> caps;
    for (size_t t = 0; t < gen.images.size(); ++t) {
      images.push_back(codebook.dequantize(gen.images[t], wcfg.image_size, wcfg.image_size));
      if (with_captions) caps.push_back(vocab.decode(gen.captions[t]));
    }
    generated.push_back(std::move(images));
    if (with_captions) captions.push_back(std::move(caps));
  }
  return metrics::evaluate_stories(stories, generated, captions, wcfg);
}

// One point of the ablation matrix.
struct ArmSpec {
  std::string name;
  model::Topology topology = model::Topology::PartialLevel;
  bool awm = true;
  bool bidirectional = true;
  train::AugMode aug = train::AugMode::None;
  // Arms whose captioner is another arm's trained model (offline aug).
  std::string captioner_arm;
};

// The build-up ladder plus the two pairwise comparisons the ablation tables
// are made of.
inline std::vector<ArmSpec> standard_arms() {
  return {
      {"tr", model::Topology::None, false, false, train::AugMode::None, ""},
      {"pma", model::Topology::PartialLevel, false, false, train::AugMode::None, ""},
      {"awm", model::Topology::PartialLevel, true, false, train::AugMode::None, ""},
      {"bi", model::Topology::PartialLevel, true, true, train::AugMode::None, ""},
      {"online", model::Topology::PartialLevel, true, true, train::AugMode::Online, ""},
      {"all_level", model::Topology::AllLevel, false, false, train::AugMode::None, ""},
      {"offline", model::Topology::PartialLevel, true, true, train::AugMode::Offline, "bi"},
  };
}

inline std::optional<ArmSpec> find_arm(const std::string& name) {
  for (const auto& a : standard_arms())
    if (a.name == name) return a;
  return std::nullopt;
}

inline io::RunConfig apply_arm(io::RunConfig cfg, const ArmSpec& arm) {
  cfg.model.topology = arm.topology;
  cfg.model.awm = arm.awm;
  cfg.train.bidirectional = arm.bidirectional;
  cfg.train.augmentation = arm.aug;
  return cfg;
}

struct ArmResult {
  std::string arm;
  uint64_t seed = 0;
  int64_t trainable_params = 0;
  metrics::MetricReport test_report;
  double final_train_loss = 0.0;
};

// Trains one arm on an already-encoded dataset and evaluates on the test
// split. `captioner` supplies frozen pseudo-texts for offline augmentation.
template <typename T>
ArmResult run_arm(const io::RunConfig& resolved, const ArmSpec& arm, const world::Dataset& ds,
                  const tok::Vocab& vocab, const tok::Codebook& codebook,
                  const model::Transformer<T>* captioner, model::Transformer<T>* keep_model = nullptr,
                  const train::MetricsSink& sink = {}) {
  io::RunConfig cfg = apply_arm(resolved, arm);
  model::Transformer<T> m(cfg.model, seed_for(cfg.seed, 0x0DE1));
  train::Trainer<T> trainer(m, cfg.train);
  std::vector<train::EncodedStory> data = train::encode_stories(ds.train, vocab, codebook, cfg.model.t_text);
  if (arm.aug == train::AugMode::Offline) {
    if (!captioner) throw std::runtime_error("offline arm '" + arm.name + "' needs a captioner model");
    trainer.set_offline_texts(train::offline_augment(*captioner, data));
  }
  trainer.run(data, sink);

  ArmResult res;
  res.arm = arm.name;
  res.seed = cfg.seed;
  res.trainable_params = m.params().count();
  res.test_report = evaluate_model(m, ds.test, vocab, codebook, cfg.world, true);
  if (keep_model) *keep_model = std::move(m);
  return res;
}

}  // namespace cmota::pipeline
