#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmota/image.hpp"
#include "cmota/rng.hpp"

namespace cmota::world {

// Synthetic story world. Scenes are flat-color sprite compositions on an
// 8x8-aligned grid so a small patch codebook codes them losslessly:
//   patch rows 0-1: sky (action glyph at patch (0,3))
//   patch rows 2-3: ground (character slots at patches (2,0..2))
// Background identity appears in every patch row, characters and the action
// are single-patch sprites.
struct WorldConfig {
  int n_backgrounds = 4;
  int n_characters = 6;
  int n_actions = 8;
  int frames = 5;  // sentences/images per story
  int image_size = 32;
  int channels = 3;
  double p_context = 1.0;   // probability the frame-1 sentence names the background
  double p_friends = 0.2;   // probability a later sentence aliases the cast as "the friends"
};

struct SceneSpec {
  int background = -1;
  std::vector<int> characters;  // sorted ids
  int action = -1;
  int frame = -1;  // not recoverable from pixels; detect_scene returns -1

  bool same_content(const SceneSpec& o) const {
    return background == o.background && characters == o.characters && action == o.action;
  }
};

struct FrameSample {
  SceneSpec spec;
  std::string sentence;
  int template_id = -1;
  int context_clause = -1;  // clause id when the sentence names the background
  bool aliased = false;
  img::ImageU8 image;
};

struct StorySample {
  int id = -1;
  uint64_t seed = 0;
  int background = -1;
  std::vector<int> roster;  // characters shared by all frames
  std::vector<FrameSample> frames;
};

enum class Split { Train, Val, Test };

const std::vector<std::string>& background_names();
const std::vector<std::string>& character_names();
const std::vector<std::string>& action_names();

// Paraphrase templates: per action, kTemplatesPerAction variants of which the
// last kTestTemplatesPerAction are reserved for the test split.
inline constexpr int kTemplatesPerAction = 4;
inline constexpr int kTestTemplatesPerAction = 1;
inline constexpr int kContextClauses = 2;

std::vector<int> split_template_variants(Split split);

std::string realize_characters(const std::vector<int>& roster, bool alias_friends);
std::string realize_sentence(const SceneSpec& spec, int template_id, bool alias_friends,
                             int context_clause = -1);

// Every realizable surface form (all templates x all rosters x all clause
// combinations is too large; this enumerates every template with every
// background and a canonical covering set of rosters, enough to pin the full
// word inventory). Used to build the closed vocabulary.
std::vector<std::string> all_template_realizations(const WorldConfig& config);

img::ImageU8 render_scene(const SceneSpec& spec, const WorldConfig& config);

// Renders of every (background, action, single-character) scene; covers every
// distinct patch the world can produce, used to fit the codebook.
std::vector<img::ImageU8> atlas_renders(const WorldConfig& config);

// Nearest-sprite matching with a per-slot distance threshold; slots beyond
// threshold report "none" (-1 / absent character).
class SceneDetector {
 public:
  explicit SceneDetector(const WorldConfig& config);
  SceneSpec detect(const img::ImageF64& image) const;
  SceneSpec detect(const img::ImageU8& image) const { return detect(img::ImageF64::from_u8(image)); }

 private:
  WorldConfig config_;
  std::vector<std::vector<double>> sky_, ground_;          // per background
  std::vector<std::vector<std::vector<double>>> chars_;    // [background][character]
  std::vector<std::vector<std::vector<double>>> actions_;  // [background][action]
  double bg_threshold_ = 0.0, char_threshold_ = 0.0, action_threshold_ = 0.0;
};

SceneSpec detect_scene(const img::ImageF64& image, const WorldConfig& config);

StorySample sample_story(uint64_t seed, const WorldConfig& config, Split split);

struct Dataset {
  WorldConfig world;
  uint64_t seed = 0;
  std::vector<StorySample> train, val, test;
};

// Stories sampled with per-story seeds derived by the splitmix sequence; test
// stories realize held-out templates only.
Dataset make_splits(int n_train, int n_val, int n_test, uint64_t seed, const WorldConfig& config);

}  // namespace cmota::world
