#include "cmota/storyworld.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace cmota::world {

namespace {

struct Rgb {
  uint8_t r, g, b;
};

// sky, ground per background
constexpr Rgb kSky[4] = {{198, 220, 255}, {140, 200, 170}, {224, 204, 160}, {120, 182, 240}};
constexpr Rgb kGround[4] = {{244, 246, 252}, {40, 120, 48}, {154, 104, 64}, {236, 212, 150}};

constexpr Rgb kCharColor[6] = {{220, 40, 40},  {250, 210, 40}, {40, 200, 220},
                               {210, 60, 200}, {30, 40, 120},  {250, 250, 250}};

// 8x8 bitmaps, one byte per row, bit 7 = leftmost pixel
constexpr uint8_t kCharShape[6][8] = {
    {0x3C, 0x7E, 0xFF, 0xFF, 0xFF, 0xFF, 0x7E, 0x3C},  // blob
    {0xFF, 0xFF, 0xC3, 0xC3, 0xC3, 0xC3, 0xFF, 0xFF},  // box
    {0x18, 0x18, 0x3C, 0x3C, 0x7E, 0x7E, 0xFF, 0xFF},  // triangle
    {0x18, 0x3C, 0x7E, 0xFF, 0xFF, 0x7E, 0x3C, 0x18},  // diamond
    {0xC3, 0xC3, 0xC3, 0xFF, 0xFF, 0xC3, 0xC3, 0xC3},  // H
    {0xC3, 0xC3, 0xC3, 0xC3, 0xC3, 0xC3, 0xFF, 0x7E},  // U
};

constexpr Rgb kActionColor = {44, 44, 44};
constexpr uint8_t kActionShape[8][8] = {
    {0xFF, 0x81, 0x81, 0x81, 0x81, 0x81, 0x81, 0xFF},  // frame
    {0x81, 0x42, 0x24, 0x18, 0x18, 0x24, 0x42, 0x81},  // X
    {0x18, 0x18, 0x18, 0xFF, 0xFF, 0x18, 0x18, 0x18},  // +
    {0xAA, 0x55, 0xAA, 0x55, 0xAA, 0x55, 0xAA, 0x55},  // checker
    {0xFF, 0x00, 0xFF, 0x00, 0xFF, 0x00, 0xFF, 0x00},  // bars
    {0x88, 0x88, 0x88, 0x88, 0x88, 0x88, 0x88, 0x88},  // pickets
    {0x01, 0x03, 0x07, 0x0F, 0x1F, 0x3F, 0x7F, 0xFF},  // wedge
    {0x00, 0x66, 0x66, 0x00, 0x00, 0x66, 0x66, 0x00},  // dots
};

const std::vector<std::string>& bg_names_impl() {
  static const std::vector<std::string> names = {"snow", "forest", "room", "beach"};
  return names;
}
const std::vector<std::string>& char_names_impl() {
  static const std::vector<std::string> names = {"mimi", "toto", "rara", "bobo", "kiki", "zuzu"};
  return names;
}
const std::vector<std::string>& action_names_impl() {
  static const std::vector<std::string> names = {"play", "jump", "dance", "sleep", "read", "sing", "cook", "paint"};
  return names;
}

// {c} marks the character phrase slot. Variant 3 of each action is held out
// for the test split.
const char* kActionTemplates[8][kTemplatesPerAction] = {
    {"{c} play a fun game", "a fun game is what {c} play", "{c} start playing together", "together {c} play a game"},
    {"{c} jump up high", "up high {c} jump", "{c} keep jumping around", "around {c} jump happily"},
    {"{c} dance to the music", "the music makes {c} dance", "{c} begin dancing slowly", "slowly {c} dance along"},
    {"{c} fall asleep quietly", "quietly {c} go to sleep", "{c} take a little nap", "a nap is what {c} take"},
    {"{c} read an old book", "an old book is read by {c}", "{c} sit and read quietly", "together {c} read a book"},
    {"{c} sing a happy song", "a happy song is sung by {c}", "{c} start singing loudly", "loudly {c} sing along"},
    {"{c} cook a warm meal", "a warm meal is cooked by {c}", "{c} begin cooking dinner", "dinner is what {c} cook"},
    {"{c} paint a small picture", "a small picture is painted by {c}", "{c} keep painting happily",
     "happily {c} paint away"},
};

const char* kContextTemplates[kContextClauses] = {"{b} is all around", "all around is {b}"};

std::string replace_slot(const std::string& tpl, const std::string& slot, const std::string& value) {
  std::string out = tpl;
  const size_t pos = out.find(slot);
  if (pos == std::string::npos) throw std::runtime_error("template missing slot " + slot);
  out.replace(pos, slot.size(), value);
  return out;
}

void paint_patch(img::ImageU8& im, int patch_row, int patch_col, Rgb color) {
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      im.at(patch_row * 8 + y, patch_col * 8 + x, 0) = color.r;
      im.at(patch_row * 8 + y, patch_col * 8 + x, 1) = color.g;
      im.at(patch_row * 8 + y, patch_col * 8 + x, 2) = color.b;
    }
}

void paint_glyph(img::ImageU8& im, int patch_row, int patch_col, const uint8_t shape[8], Rgb color) {
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      if (shape[y] & (0x80u >> x)) {
        im.at(patch_row * 8 + y, patch_col * 8 + x, 0) = color.r;
        im.at(patch_row * 8 + y, patch_col * 8 + x, 1) = color.g;
        im.at(patch_row * 8 + y, patch_col * 8 + x, 2) = color.b;
      }
}

std::vector<double> extract_patch(const img::ImageF64& im, int patch_row, int patch_col) {
  std::vector<double> p;
  p.reserve(static_cast<size_t>(8) * 8 * im.channels);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < im.channels; ++c) p.push_back(im.at(patch_row * 8 + y, patch_col * 8 + x, c));
  return p;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void validate(const WorldConfig& c) {
  if (c.n_backgrounds < 1 || c.n_backgrounds > 4) throw std::runtime_error("world: 1..4 backgrounds supported");
  if (c.n_characters < 1 || c.n_characters > 6) throw std::runtime_error("world: 1..6 characters supported");
  if (c.n_actions < 1 || c.n_actions > 8) throw std::runtime_error("world: 1..8 actions supported");
  if (c.image_size != 32 || c.channels != 3) throw std::runtime_error("world: renderer is fixed at 32x32x3");
  if (c.frames < 2) throw std::runtime_error("world: stories need at least 2 frames");
}

}  // namespace

const std::vector<std::string>& background_names() { return bg_names_impl(); }
const std::vector<std::string>& character_names() { return char_names_impl(); }
const std::vector<std::string>& action_names() { return action_names_impl(); }

std::vector<int> split_template_variants(Split split) {
  std::vector<int> v;
  const int first_test = kTemplatesPerAction - kTestTemplatesPerAction;
  if (split == Split::Test) {
    for (int i = first_test; i < kTemplatesPerAction; ++i) v.push_back(i);
  } else {
    for (int i = 0; i < first_test; ++i) v.push_back(i);
  }
  return v;
}

std::string realize_characters(const std::vector<int>& roster, bool alias_friends) {
  if (alias_friends) return "the friends";
  std::string out;
  for (size_t i = 0; i < roster.size(); ++i) {
    if (i) out += " and ";
    out += char_names_impl()[static_cast<size_t>(roster[i])];
  }
  return out;
}

std::string realize_sentence(const SceneSpec& spec, int template_id, bool alias_friends, int context_clause) {
  if (spec.action < 0 || spec.action >= 8) throw std::runtime_error("realize_sentence: bad action id");
  if (template_id < 0 || template_id >= kTemplatesPerAction)
    throw std::runtime_error("realize_sentence: no template " + std::to_string(template_id));
  std::string sentence =
      replace_slot(kActionTemplates[spec.action][template_id], "{c}", realize_characters(spec.characters, alias_friends));
  if (context_clause >= 0) {
    if (context_clause >= kContextClauses) throw std::runtime_error("realize_sentence: bad context clause");
    sentence = replace_slot(kContextTemplates[context_clause], "{b}",
                            bg_names_impl()[static_cast<size_t>(spec.background)]) +
               " " + sentence;
  }
  return sentence;
}

std::vector<std::string> all_template_realizations(const WorldConfig& config) {
  validate(config);
  std::vector<std::string> corpus;
  // A covering roster set: every character name, "and" joins, and the alias.
  std::vector<std::vector<int>> rosters;
  for (int c = 0; c < config.n_characters; ++c) rosters.push_back({c});
  if (config.n_characters >= 2) rosters.push_back({0, 1});
  for (int a = 0; a < config.n_actions; ++a) {
    for (int t = 0; t < kTemplatesPerAction; ++t) {
      for (const auto& roster : rosters) {
        for (int b = 0; b < config.n_backgrounds; ++b) {
          SceneSpec spec{b, roster, a, 0};
          corpus.push_back(realize_sentence(spec, t, false, -1));
          for (int cc = 0; cc < kContextClauses; ++cc)
            corpus.push_back(realize_sentence(spec, t, false, cc));
          corpus.push_back(realize_sentence(spec, t, true, -1));
        }
      }
    }
  }
  return corpus;
}

img::ImageU8 render_scene(const SceneSpec& spec, const WorldConfig& config) {
  validate(config);
  if (spec.background < 0 || spec.background >= config.n_backgrounds)
    throw std::runtime_error("render_scene: invalid background id");
  if (spec.action < 0 || spec.action >= config.n_actions) throw std::runtime_error("render_scene: invalid action id");
  if (spec.characters.size() > 3) throw std::runtime_error("render_scene: at most 3 characters per scene");
  for (int c : spec.characters)
    if (c < 0 || c >= config.n_characters) throw std::runtime_error("render_scene: invalid character id");

  img::ImageU8 im = img::ImageU8::make(32, 32, 3);
  for (int pr = 0; pr < 2; ++pr)
    for (int pc = 0; pc < 4; ++pc) paint_patch(im, pr, pc, kSky[spec.background]);
  for (int pr = 2; pr < 4; ++pr)
    for (int pc = 0; pc < 4; ++pc) paint_patch(im, pr, pc, kGround[spec.background]);
  paint_glyph(im, 0, 3, kActionShape[spec.action], kActionColor);
  std::vector<int> roster = spec.characters;
  std::sort(roster.begin(), roster.end());
  for (size_t i = 0; i < roster.size(); ++i)
    paint_glyph(im, 2, static_cast<int>(i), kCharShape[roster[i]], kCharColor[roster[i]]);
  return im;
}

std::vector<img::ImageU8> atlas_renders(const WorldConfig& config) {
  validate(config);
  std::vector<img::ImageU8> out;
  for (int b = 0; b < config.n_backgrounds; ++b)
    for (int a = 0; a < config.n_actions; ++a)
      for (int c = 0; c < config.n_characters; ++c) out.push_back(render_scene({b, {c}, a, 0}, config));
  return out;
}

SceneDetector::SceneDetector(const WorldConfig& config) : config_(config) {
  validate(config);
  for (int b = 0; b < config.n_backgrounds; ++b) {
    img::ImageF64 plain = img::ImageF64::from_u8(render_scene({b, {}, 0, 0}, config));
    sky_.push_back(extract_patch(plain, 1, 0));
    ground_.push_back(extract_patch(plain, 3, 0));
    std::vector<std::vector<double>> chars_b, actions_b;
    for (int c = 0; c < config.n_characters; ++c) {
      img::ImageF64 r = img::ImageF64::from_u8(render_scene({b, {c}, 0, 0}, config));
      chars_b.push_back(extract_patch(r, 2, 0));
    }
    for (int a = 0; a < config.n_actions; ++a) {
      img::ImageF64 r = img::ImageF64::from_u8(render_scene({b, {}, a, 0}, config));
      actions_b.push_back(extract_patch(r, 0, 3));
    }
    chars_.push_back(std::move(chars_b));
    actions_.push_back(std::move(actions_b));
  }
  // Thresholds: a quarter of the smallest inter-candidate distance per role.
  auto min_pairwise = [](const std::vector<std::vector<double>>& xs) {
    double best = 1e300;
    for (size_t i = 0; i < xs.size(); ++i)
      for (size_t j = i + 1; j < xs.size(); ++j) best = std::min(best, sq_dist(xs[i], xs[j]));
    return best;
  };
  double bg_min = 1e300;
  {
    std::vector<std::vector<double>> combos;
    for (int b = 0; b < config.n_backgrounds; ++b) {
      std::vector<double> v = sky_[static_cast<size_t>(b)];
      v.insert(v.end(), ground_[static_cast<size_t>(b)].begin(), ground_[static_cast<size_t>(b)].end());
      combos.push_back(std::move(v));
    }
    bg_min = config.n_backgrounds > 1 ? min_pairwise(combos) : 4e6;
  }
  double char_min = 1e300, action_min = 1e300;
  for (int b = 0; b < config.n_backgrounds; ++b) {
    std::vector<std::vector<double>> cands = chars_[static_cast<size_t>(b)];
    cands.push_back(ground_[static_cast<size_t>(b)]);
    char_min = std::min(char_min, min_pairwise(cands));
    std::vector<std::vector<double>> acands = actions_[static_cast<size_t>(b)];
    acands.push_back(sky_[static_cast<size_t>(b)]);
    action_min = std::min(action_min, config.n_actions > 1 ? min_pairwise(acands) : 4e6);
  }
  bg_threshold_ = 0.25 * bg_min;
  char_threshold_ = 0.25 * char_min;
  action_threshold_ = 0.25 * action_min;
}

SceneSpec SceneDetector::detect(const img::ImageF64& image) const {
  if (image.width != 32 || image.height != 32 || image.channels != 3)
    throw std::runtime_error("detect_scene: image does not match world dimensions");
  SceneSpec spec;
  spec.frame = -1;
  const std::vector<double> sky = extract_patch(image, 1, 0);
  const std::vector<double> ground = extract_patch(image, 3, 0);
  double best = 1e300;
  int best_b = -1;
  for (int b = 0; b < config_.n_backgrounds; ++b) {
    const double d = sq_dist(sky, sky_[static_cast<size_t>(b)]) + sq_dist(ground, ground_[static_cast<size_t>(b)]);
    if (d < best) {
      best = d;
      best_b = b;
    }
  }
  if (best > 2.0 * bg_threshold_) {
    spec.background = -1;  // unknown
    spec.action = -1;
    return spec;
  }
  spec.background = best_b;

  for (int slot = 0; slot < 3; ++slot) {
    const std::vector<double> p = extract_patch(image, 2, slot);
    double cd = sq_dist(p, ground_[static_cast<size_t>(best_b)]);
    int cid = -1;  // ground = empty slot
    for (int c = 0; c < config_.n_characters; ++c) {
      const double d = sq_dist(p, chars_[static_cast<size_t>(best_b)][static_cast<size_t>(c)]);
      if (d < cd) {
        cd = d;
        cid = c;
      }
    }
    if (cid >= 0 && cd <= char_threshold_) spec.characters.push_back(cid);
  }
  std::sort(spec.characters.begin(), spec.characters.end());
  spec.characters.erase(std::unique(spec.characters.begin(), spec.characters.end()), spec.characters.end());

  const std::vector<double> ap = extract_patch(image, 0, 3);
  double ad = 1e300;
  int aid = -1;
  for (int a = 0; a < config_.n_actions; ++a) {
    const double d = sq_dist(ap, actions_[static_cast<size_t>(best_b)][static_cast<size_t>(a)]);
    if (d < ad) {
      ad = d;
      aid = a;
    }
  }
  spec.action = ad <= action_threshold_ ? aid : -1;
  return spec;
}

SceneSpec detect_scene(const img::ImageF64& image, const WorldConfig& config) {
  return SceneDetector(config).detect(image);
}

StorySample sample_story(uint64_t seed, const WorldConfig& config, Split split) {
  validate(config);
  Rng rng(seed);
  StorySample story;
  story.seed = seed;
  story.background = rng.next_int(0, config.n_backgrounds - 1);
  const int roster_size = rng.next_int(1, std::min(3, config.n_characters));
  std::vector<int> ids(static_cast<size_t>(config.n_characters));
  std::iota(ids.begin(), ids.end(), 0);
  rng.shuffle(ids.begin(), ids.end());
  story.roster.assign(ids.begin(), ids.begin() + roster_size);
  std::sort(story.roster.begin(), story.roster.end());

  const bool mention_context = rng.next_bool(config.p_context);
  const std::vector<int> variants = split_template_variants(split);

  for (int t = 0; t < config.frames; ++t) {
    FrameSample frame;
    frame.spec.background = story.background;
    frame.spec.characters = story.roster;
    frame.spec.action = rng.next_int(0, config.n_actions - 1);
    frame.spec.frame = t;
    frame.template_id = variants[static_cast<size_t>(rng.next_below(variants.size()))];
    frame.aliased = t > 0 && rng.next_bool(config.p_friends);
    frame.context_clause = (t == 0 && mention_context) ? rng.next_int(0, kContextClauses - 1) : -1;
    frame.sentence = realize_sentence(frame.spec, frame.template_id, frame.aliased, frame.context_clause);
    frame.image = render_scene(frame.spec, config);
    story.frames.push_back(std::move(frame));
  }
  return story;
}

Dataset make_splits(int n_train, int n_val, int n_test, uint64_t seed, const WorldConfig& config) {
  validate(config);
  if (n_train < 0 || n_val < 0 || n_test < 0) throw std::runtime_error("make_splits: negative split size");
  Dataset ds;
  ds.world = config;
  ds.seed = seed;
  uint64_t index = 0;
  auto draw = [&](int n, Split split, std::vector<StorySample>& out) {
    for (int i = 0; i < n; ++i, ++index) {
      StorySample s = sample_story(seed_for(seed, index), config, split);
      s.id = static_cast<int>(index);
      out.push_back(std::move(s));
    }
  };
  draw(n_train, Split::Train, ds.train);
  draw(n_val, Split::Val, ds.val);
  draw(n_test, Split::Test, ds.test);
  return ds;
}

}  // namespace cmota::world
