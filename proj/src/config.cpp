#include "cmota/config.hpp"

#include <filesystem>
#include <fstream>

namespace cmota::io {

using nlohmann::json;

void RunConfig::validate() const {
  if (precision != "f32" && precision != "f64")
    throw ConfigError("config: precision must be f32 or f64");
  if (codebook_k < 2 || codebook_patch < 1) throw ConfigError("config: bad codebook settings");
  if (dataset_train < 0 || dataset_val < 0 || dataset_test < 0) throw ConfigError("config: bad dataset sizes");
  if (world.frames != model.frames) throw ConfigError("config: world.frames and model.frames must agree");
  train.validate();
  // model.validate() needs vocab_text which is resolved from the world at
  // training time; validate the rest here.
  if (model.d_model <= 0 || model.heads <= 0 || model.d_model % model.heads != 0)
    throw ConfigError("config: model.d_model must be divisible by model.heads");
}

RunConfig preset_config(const std::string& name) {
  RunConfig cfg;
  cfg.preset = name;
  if (name == "desk") {
    return cfg;  // defaults are the desk preset
  }
  if (name == "paper") {
    cfg.model = model::ModelConfig::paper_preset();
    cfg.world.frames = cfg.model.frames;
    cfg.codebook_k = cfg.model.codebook;
    cfg.train.lr = 4.5e-6;
    cfg.train.lr_scale_by_batch = true;
    return cfg;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

json to_json(const RunConfig& cfg) {
  json j;
  j["preset"] = cfg.preset;
  j["precision"] = cfg.precision;
  j["seed"] = cfg.seed;
  j["codebook"] = {{"k", cfg.codebook_k}, {"patch", cfg.codebook_patch}};
  j["dataset"] = {{"train", cfg.dataset_train}, {"val", cfg.dataset_val}, {"test", cfg.dataset_test}};
  j["world"] = {{"n_backgrounds", cfg.world.n_backgrounds},
                {"n_characters", cfg.world.n_characters},
                {"n_actions", cfg.world.n_actions},
                {"frames", cfg.world.frames},
                {"image_size", cfg.world.image_size},
                {"channels", cfg.world.channels},
                {"p_context", cfg.world.p_context},
                {"p_friends", cfg.world.p_friends}};
  j["model"] = {{"layers", cfg.model.layers},
                {"d_model", cfg.model.d_model},
                {"heads", cfg.model.heads},
                {"t_text", cfg.model.t_text},
                {"t_image", cfg.model.t_image},
                {"vocab_text", cfg.model.vocab_text},
                {"codebook", cfg.model.codebook},
                {"t_mem", cfg.model.t_mem},
                {"frames", cfg.model.frames},
                {"ffn_mult", cfg.model.ffn_mult},
                {"topology", model::topology_name(cfg.model.topology)},
                {"awm", cfg.model.awm},
                {"memory_in_i2t", cfg.model.memory_in_i2t},
                {"memory_single_head", cfg.model.memory_single_head},
                {"dropout", cfg.model.dropout}};
  j["train"] = {{"lambda1", cfg.train.lambda1},
                {"lambda2", cfg.train.lambda2},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"eps", cfg.train.eps},
                {"weight_decay", cfg.train.weight_decay},
                {"lr", cfg.train.lr},
                {"lr_scale_by_batch", cfg.train.lr_scale_by_batch},
                {"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"augmentation", train::aug_name(cfg.train.augmentation)},
                {"warmup_epochs", cfg.train.warmup_epochs},
                {"grad_clip", cfg.train.grad_clip},
                {"alternation", cfg.train.alternation},
                {"bidirectional", cfg.train.bidirectional}};
  return j;
}

namespace {

// Applies `src` over `dst` (both objects), erroring on keys absent from dst.
void merge_strict(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config: expected object at " + (path.empty() ? "root" : path));
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string child = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("config: unknown key '" + child + "'");
    if (dst[it.key()].is_object()) {
      merge_strict(dst[it.key()], it.value(), child);
    } else {
      if (it.value().is_object() || it.value().is_array())
        throw ConfigError("config: key '" + child + "' expects a scalar");
      dst[it.key()] = it.value();
    }
  }
}

template <typename V>
V get(const json& j, const char* key) {
  try {
    return j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + std::string(key) + "': " + e.what());
  }
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  cfg.preset = get<std::string>(j, "preset");
  cfg.precision = get<std::string>(j, "precision");
  cfg.seed = get<uint64_t>(j, "seed");
  cfg.codebook_k = get<int>(j.at("codebook"), "k");
  cfg.codebook_patch = get<int>(j.at("codebook"), "patch");
  cfg.dataset_train = get<int>(j.at("dataset"), "train");
  cfg.dataset_val = get<int>(j.at("dataset"), "val");
  cfg.dataset_test = get<int>(j.at("dataset"), "test");
  const json& w = j.at("world");
  cfg.world.n_backgrounds = get<int>(w, "n_backgrounds");
  cfg.world.n_characters = get<int>(w, "n_characters");
  cfg.world.n_actions = get<int>(w, "n_actions");
  cfg.world.frames = get<int>(w, "frames");
  cfg.world.image_size = get<int>(w, "image_size");
  cfg.world.channels = get<int>(w, "channels");
  cfg.world.p_context = get<double>(w, "p_context");
  cfg.world.p_friends = get<double>(w, "p_friends");
  const json& m = j.at("model");
  cfg.model.layers = get<int>(m, "layers");
  cfg.model.d_model = get<int>(m, "d_model");
  cfg.model.heads = get<int>(m, "heads");
  cfg.model.t_text = get<int>(m, "t_text");
  cfg.model.t_image = get<int>(m, "t_image");
  cfg.model.vocab_text = get<int>(m, "vocab_text");
  cfg.model.codebook = get<int>(m, "codebook");
  cfg.model.t_mem = get<int>(m, "t_mem");
  cfg.model.frames = get<int>(m, "frames");
  cfg.model.ffn_mult = get<int>(m, "ffn_mult");
  cfg.model.topology = model::topology_from_name(get<std::string>(m, "topology"));
  cfg.model.awm = get<bool>(m, "awm");
  cfg.model.memory_in_i2t = get<bool>(m, "memory_in_i2t");
  cfg.model.memory_single_head = get<bool>(m, "memory_single_head");
  cfg.model.dropout = get<double>(m, "dropout");
  const json& t = j.at("train");
  cfg.train.lambda1 = get<double>(t, "lambda1");
  cfg.train.lambda2 = get<double>(t, "lambda2");
  cfg.train.beta1 = get<double>(t, "beta1");
  cfg.train.beta2 = get<double>(t, "beta2");
  cfg.train.eps = get<double>(t, "eps");
  cfg.train.weight_decay = get<double>(t, "weight_decay");
  cfg.train.lr = get<double>(t, "lr");
  cfg.train.lr_scale_by_batch = get<bool>(t, "lr_scale_by_batch");
  cfg.train.epochs = get<int>(t, "epochs");
  cfg.train.batch_size = get<int>(t, "batch_size");
  cfg.train.augmentation = train::aug_from_name(get<std::string>(t, "augmentation"));
  cfg.train.warmup_epochs = get<int>(t, "warmup_epochs");
  cfg.train.grad_clip = get<double>(t, "grad_clip");
  cfg.train.alternation = get<int>(t, "alternation");
  cfg.train.bidirectional = get<bool>(t, "bidirectional");
  cfg.train.seed = cfg.seed;
  return cfg;
}

RunConfig merge_config(const RunConfig& base, const json& overrides) {
  json j = to_json(base);
  merge_strict(j, overrides, "");
  RunConfig merged = run_config_from_json(j);
  merged.validate();
  return merged;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open '" + path + "'");
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: parse error in '" + path + "': " + e.what());
  }
  std::string preset = "desk";
  if (j.contains("preset")) preset = j["preset"].get<std::string>();
  return merge_config(preset_config(preset), j);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string dump = to_json(cfg).dump();
  uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open for write: " + tmp);
    os << content;
    if (!os) throw std::runtime_error("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace cmota::io
