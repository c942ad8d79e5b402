#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmota/codebook.hpp"
#include "cmota/config.hpp"
#include "cmota/model.hpp"
#include "cmota/trainer.hpp"
#include "cmota/vocab.hpp"

namespace cmota::io {

// Versioned binary container: header (magic, version, config blob), an extra
// JSON blob (vocab, counters, RNG state), then length-prefixed named tensor
// records (name, dtype tag, shape, little-endian payload).
inline constexpr uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  uint8_t dtype = 0;  // 0 = f32, 1 = f64
  std::vector<int64_t> dims;
  std::vector<uint8_t> payload;
};

struct Container {
  uint32_t version = kCheckpointVersion;
  std::string config_json;
  std::string extra_json;
  std::vector<TensorRecord> records;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& r : records)
      if (r.name == name) return &r;
    return nullptr;
  }
};

void write_container(const std::string& path, const Container& c);  // atomic
Container read_container(const std::string& path);

namespace detail {

template <typename T>
constexpr uint8_t dtype_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 0 : 1;
}

template <typename T>
TensorRecord make_record(const std::string& name, const std::vector<int64_t>& dims,
                         const std::vector<T>& values) {
  TensorRecord r;
  r.name = name;
  r.dtype = dtype_tag<T>();
  r.dims = dims;
  r.payload.resize(values.size() * sizeof(T));
  std::memcpy(r.payload.data(), values.data(), r.payload.size());
  return r;
}

template <typename T>
std::vector<T> record_values(const TensorRecord& r) {
  if (r.dtype != dtype_tag<T>()) throw std::runtime_error("checkpoint: dtype mismatch for '" + r.name + "'");
  std::vector<T> out(r.payload.size() / sizeof(T));
  std::memcpy(out.data(), r.payload.data(), r.payload.size());
  return out;
}

}  // namespace detail

// Reads just the resolved config of a checkpoint.
RunConfig read_checkpoint_config(const std::string& path);

template <typename T>
void save_checkpoint(const std::string& path, const RunConfig& cfg, const model::Transformer<T>& model,
                     train::Trainer<T>* trainer, const tok::Vocab& vocab, const tok::Codebook& codebook) {
  Container c;
  c.config_json = to_json(cfg).dump();

  nlohmann::json extra;
  extra["config_hash"] = config_hash(cfg);
  extra["vocab"] = vocab.words();
  extra["codebook"] = {{"patch", codebook.patch_size()}, {"channels", codebook.channels()}};
  if (trainer) {
    extra["progress"] = {{"epoch", trainer->epoch()},
                         {"batch_index", trainer->batch_index()},
                         {"global_step", trainer->global_step()},
                         {"opt_step", trainer->optimizer().step_count()}};
    const auto st = trainer->rng().state();
    extra["rng_state"] = {st[0], st[1], st[2], st[3]};
    nlohmann::json pt = nlohmann::json::array();
    for (const auto& per_story : trainer->pseudo_texts()) {
      nlohmann::json story = nlohmann::json::array();
      for (const auto& seq : per_story) story.push_back(seq.valid());
      pt.push_back(story);
    }
    extra["pseudo_texts"] = pt;
    nlohmann::json ot = nlohmann::json::array();
    for (const auto& per_story : trainer->offline_texts()) {
      nlohmann::json story = nlohmann::json::array();
      for (const auto& seq : per_story) story.push_back(seq.valid());
      ot.push_back(story);
    }
    extra["offline_texts"] = ot;
  }
  c.extra_json = extra.dump();

  for (const auto& [name, t] : model.params().items) {
    std::vector<int64_t> dims(t.shape.begin(), t.shape.end());
    c.records.push_back(detail::make_record("model." + name, dims, *t.data));
  }
  if (trainer) {
    auto& opt = trainer->optimizer();
    opt.ensure(const_cast<model::Transformer<T>&>(model).params());
    for (size_t i = 0; i < model.params().items.size(); ++i) {
      const auto& [name, t] = model.params().items[i];
      std::vector<int64_t> dims(t.shape.begin(), t.shape.end());
      c.records.push_back(detail::make_record("opt.m." + name, dims, opt.moments1()[i]));
      c.records.push_back(detail::make_record("opt.v." + name, dims, opt.moments2()[i]));
    }
  }
  {
    // codebook entries as one K x dim matrix (f64)
    std::vector<double> flat;
    for (const auto& e : codebook.entries()) flat.insert(flat.end(), e.begin(), e.end());
    c.records.push_back(detail::make_record<double>(
        "codebook.entries", {codebook.size(), codebook.entry_dim()}, flat));
  }
  write_container(path, c);
}

struct LoadedCheckpoint {
  RunConfig config;
  std::string config_hash;
  tok::Vocab vocab;
  tok::Codebook codebook;
};

// Loads tensors in place into an already-constructed model (and optionally
// trainer state). The model must have been built from the checkpoint config.
template <typename T>
LoadedCheckpoint load_checkpoint(const std::string& path, model::Transformer<T>& model,
                                 train::Trainer<T>* trainer) {
  Container c = read_container(path);
  LoadedCheckpoint out;
  out.config = run_config_from_json(nlohmann::json::parse(c.config_json));
  nlohmann::json extra = nlohmann::json::parse(c.extra_json);
  out.config_hash = extra.value("config_hash", "");
  out.vocab = tok::Vocab::from_words(extra.at("vocab").get<std::vector<std::string>>());

  for (auto& [name, t] : model.params().items) {
    const TensorRecord* r = c.find("model." + name);
    if (!r) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    std::vector<T> values = detail::record_values<T>(*r);
    if (values.size() != t.numel()) throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
    *t.data = std::move(values);
  }
  {
    const TensorRecord* r = c.find("codebook.entries");
    if (!r) throw std::runtime_error("checkpoint: missing codebook entries");
    std::vector<double> flat = detail::record_values<double>(*r);
    const int k = static_cast<int>(r->dims[0]);
    const int dim = static_cast<int>(r->dims[1]);
    std::vector<std::vector<double>> entries;
    for (int i = 0; i < k; ++i)
      entries.emplace_back(flat.begin() + static_cast<int64_t>(i) * dim, flat.begin() + static_cast<int64_t>(i + 1) * dim);
    out.codebook = tok::Codebook::from_parts(extra.at("codebook").at("patch").get<int>(),
                                             extra.at("codebook").at("channels").get<int>(), std::move(entries));
  }
  if (trainer) {
    if (!extra.contains("progress")) throw std::runtime_error("checkpoint: no trainer state saved");
    auto& opt = trainer->optimizer();
    opt.ensure(model.params());
    for (size_t i = 0; i < model.params().items.size(); ++i) {
      const auto& name = model.params().items[i].first;
      const TensorRecord* rm = c.find("opt.m." + name);
      const TensorRecord* rv = c.find("opt.v." + name);
      if (!rm || !rv) throw std::runtime_error("checkpoint: missing optimizer state for '" + name + "'");
      opt.moments1()[i] = detail::record_values<T>(*rm);
      opt.moments2()[i] = detail::record_values<T>(*rv);
    }
    opt.set_step_count(extra.at("progress").at("opt_step").get<int64_t>());
    trainer->restore_progress(extra.at("progress").at("epoch").get<int>(),
                              extra.at("progress").at("batch_index").get<int>(),
                              extra.at("progress").at("global_step").get<int64_t>());
    const auto st = extra.at("rng_state").get<std::vector<uint64_t>>();
    trainer->rng().set_state({st[0], st[1], st[2], st[3]});
    auto read_texts = [&](const char* key, std::vector<std::vector<tok::TokenSequence>>& dst) {
      dst.clear();
      if (!extra.contains(key)) return;
      for (const auto& story : extra.at(key)) {
        std::vector<tok::TokenSequence> seqs;
        for (const auto& toks : story) {
          tok::TokenSequence seq;
          seq.modality = tok::Modality::Text;
          seq.indices = toks.get<std::vector<int>>();
          seq.length = static_cast<int>(seq.indices.size());
          seqs.push_back(std::move(seq));
        }
        dst.push_back(std::move(seqs));
      }
    };
    read_texts("pseudo_texts", trainer->pseudo_texts());
    std::vector<std::vector<tok::TokenSequence>> offline;
    read_texts("offline_texts", offline);
    trainer->set_offline_texts(std::move(offline));
  }
  return out;
}

}  // namespace cmota::io
