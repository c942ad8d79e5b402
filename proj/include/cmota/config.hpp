#pragma once

#include <string>

#include <json.hpp>

#include "cmota/model.hpp"
#include "cmota/storyworld.hpp"
#include "cmota/trainer.hpp"

namespace cmota::io {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Fully resolved run configuration. Serialized canonically (nlohmann objects
// keep keys sorted), hashed for artifact provenance.
struct RunConfig {
  std::string preset = "desk";
  std::string precision = "f32";  // f32 for training, f64 for verification runs
  uint64_t seed = 0;
  int codebook_k = 64;
  int codebook_patch = 8;
  int dataset_train = 500;
  int dataset_val = 50;
  int dataset_test = 100;
  world::WorldConfig world;
  model::ModelConfig model;
  train::TrainConfig train;

  void validate() const;
};

RunConfig preset_config(const std::string& name);  // "desk" | "paper"

nlohmann::json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// Parses a config file; unknown keys anywhere in the tree are errors.
RunConfig load_config_file(const std::string& path);

// Merges a partial JSON tree over a base config (same strict key checking).
RunConfig merge_config(const RunConfig& base, const nlohmann::json& overrides);

// Content hash of the canonical serialization (FNV-1a 64, hex); stable under
// key reordering because serialization is canonical.
std::string config_hash(const RunConfig& cfg);

void write_text_atomic(const std::string& path, const std::string& content);

}  // namespace cmota::io
