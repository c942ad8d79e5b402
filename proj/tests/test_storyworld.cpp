#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "cmota/codebook.hpp"
#include "cmota/storyworld.hpp"
#include "cmota/vocab.hpp"

using namespace cmota;
using namespace cmota::world;

TEST_CASE("sample_story is deterministic under seed") {
  WorldConfig cfg;
  StorySample a = sample_story(1234, cfg, Split::Train);
  StorySample b = sample_story(1234, cfg, Split::Train);
  REQUIRE(a.frames.size() == b.frames.size());
  CHECK(a.background == b.background);
  CHECK(a.roster == b.roster);
  for (size_t i = 0; i < a.frames.size(); ++i) {
    CHECK(a.frames[i].sentence == b.frames[i].sentence);
    CHECK(a.frames[i].image == b.frames[i].image);
  }
  StorySample c = sample_story(1235, cfg, Split::Train);
  bool differs = c.background != a.background || c.roster != a.roster;
  for (size_t i = 0; i < a.frames.size() && !differs; ++i)
    differs = a.frames[i].sentence != c.frames[i].sentence;
  CHECK(differs);
}

TEST_CASE("p_context=1: background word in sentence 1 only; p_context=0: never") {
  WorldConfig cfg;
  cfg.p_context = 1.0;
  const auto& bgs = background_names();
  auto mentions_bg = [&](const std::string& s) {
    for (const auto& w : tok::Vocab::split_words(s))
      for (const auto& b : bgs)
        if (w == b) return true;
    return false;
  };
  int first_mentions = 0;
  for (int i = 0; i < 200; ++i) {
    StorySample s = sample_story(seed_for(77, static_cast<uint64_t>(i)), cfg, Split::Train);
    if (mentions_bg(s.frames[0].sentence)) ++first_mentions;
    for (size_t t = 1; t < s.frames.size(); ++t) CHECK(!mentions_bg(s.frames[t].sentence));
  }
  CHECK(first_mentions == 200);

  cfg.p_context = 0.0;
  for (int i = 0; i < 50; ++i) {
    StorySample s = sample_story(seed_for(78, static_cast<uint64_t>(i)), cfg, Split::Train);
    for (const auto& f : s.frames) CHECK(!mentions_bg(f.sentence));
  }
}

TEST_CASE("background mention rate at t=1 tracks p_context") {
  WorldConfig cfg;
  cfg.p_context = 0.6;
  const auto& bgs = background_names();
  int mentions = 0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    StorySample s = sample_story(seed_for(99, static_cast<uint64_t>(i)), cfg, Split::Train);
    for (const auto& w : tok::Vocab::split_words(s.frames[0].sentence))
      for (const auto& b : bgs)
        if (w == b) {
          ++mentions;
          goto next;
        }
  next:;
  }
  // binomial(1000, 0.6): +-4 sigma ~ 62
  CHECK(mentions > 538);
  CHECK(mentions < 662);
}

TEST_CASE("render_scene: determinism, empty scene, invalid ids") {
  WorldConfig cfg;
  SceneSpec s{2, {0, 3}, 5, 1};
  CHECK(render_scene(s, cfg) == render_scene(s, cfg));

  SceneSpec empty{1, {}, 0, 0};
  img::ImageU8 im = render_scene(empty, cfg);
  // character slots show pure ground: patch (2,0) equals patch (3,0)
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) CHECK(im.at(16 + y, x, c) == im.at(24 + y, x, c));

  CHECK_THROWS(render_scene({9, {}, 0, 0}, cfg));
  CHECK_THROWS(render_scene({0, {7}, 0, 0}, cfg));
}

TEST_CASE("detect_scene inverts render_scene over the full scene space") {
  WorldConfig cfg;
  SceneDetector det(cfg);
  // All rosters of size 0..2  plus a few of size 3, all backgrounds, all actions.
  std::vector<std::vector<int>> rosters = {{}};
  for (int a = 0; a < 6; ++a) rosters.push_back({a});
  for (int a = 0; a < 6; ++a)
    for (int b = a + 1; b < 6; ++b) rosters.push_back({a, b});
  rosters.push_back({0, 1, 2});
  rosters.push_back({1, 3, 5});
  rosters.push_back({0, 2, 4});
  for (int bg = 0; bg < 4; ++bg)
    for (int act = 0; act < 8; ++act)
      for (const auto& r : rosters) {
        SceneSpec spec{bg, r, act, 0};
        SceneSpec got = det.detect(render_scene(spec, cfg));
        CHECK(got.same_content(spec));
      }
}

TEST_CASE("detect_scene reports unknown background under heavy noise") {
  WorldConfig cfg;
  SceneDetector det(cfg);
  img::ImageU8 im = render_scene({0, {1}, 2, 0}, cfg);
  Rng rng(5);
  for (auto& p : im.pixels) p = static_cast<uint8_t>(rng.next_below(256));
  SceneSpec got = det.detect(im);
  CHECK(got.background == -1);
}

TEST_CASE("detect_scene exact on codebook-coded clean renders") {
  WorldConfig cfg;
  std::vector<img::ImageU8> atlas = atlas_renders(cfg);
  CHECK(atlas.size() == 4 * 8 * 6);
  tok::Codebook cb = tok::Codebook::fit(atlas, 64, 8, 13);
  SceneDetector det(cfg);
  for (int bg = 0; bg < 4; ++bg)
    for (int act = 0; act < 8; ++act)
      for (int c0 = 0; c0 < 6; ++c0) {
        SceneSpec spec{bg, {c0, (c0 + 2) % 6}, act, 0};
        std::sort(spec.characters.begin(), spec.characters.end());
        img::ImageU8 clean = render_scene(spec, cfg);
        img::ImageF64 coded = cb.dequantize(cb.quantize(clean), 32, 32);
        SceneSpec got = det.detect(coded);
        CHECK(got.same_content(spec));
      }
}

TEST_CASE("realize_sentence: paraphrases differ, alias removes names, missing template throws") {
  SceneSpec spec{0, {0, 1}, 3, 0};
  std::string a = realize_sentence(spec, 0, false);
  std::string b = realize_sentence(spec, 1, false);
  CHECK(a != b);

  std::string aliased = realize_sentence(spec, 0, true);
  for (const auto& name : character_names())
    CHECK(aliased.find(name) == std::string::npos);
  CHECK(aliased.find("friends") != std::string::npos);

  CHECK_THROWS(realize_sentence(spec, kTemplatesPerAction, false));
}

TEST_CASE("vocabulary built from the full template sweep has zero OOV on any realization") {
  WorldConfig cfg;
  tok::Vocab vocab = tok::Vocab::build(all_template_realizations(cfg));
  // Every sentence any split can produce round-trips without OOV.
  for (int split_i = 0; split_i < 2; ++split_i) {
    Split split = split_i == 0 ? Split::Train : Split::Test;
    for (int i = 0; i < 300; ++i) {
      StorySample s = sample_story(seed_for(1000 + split_i, static_cast<uint64_t>(i)), cfg, split);
      for (const auto& f : s.frames) {
        tok::TokenSequence t = vocab.encode(f.sentence, 16);
        CHECK(vocab.decode(t) == tok::Vocab::normalize(f.sentence));
      }
    }
  }
}

TEST_CASE("sentences fit the desk text capacity") {
  WorldConfig cfg;
  size_t max_words = 0;
  for (const auto& s : all_template_realizations(cfg))
    max_words = std::max(max_words, tok::Vocab::split_words(s).size());
  // Longest roster phrase is 5 words; template sweep uses covering rosters,
  // so re-check the true worst case directly.
  SceneSpec worst{0, {0, 1, 2}, 0, 0};
  for (int a = 0; a < 8; ++a)
    for (int t = 0; t < kTemplatesPerAction; ++t)
      for (int cc = -1; cc < kContextClauses; ++cc) {
        worst.action = a;
        max_words = std::max(max_words, tok::Vocab::split_words(realize_sentence(worst, t, false, cc)).size());
      }
  CHECK(max_words + 1 <= 16);  // words + EOS fit T_text
}

TEST_CASE("make_splits: sizes, template partition, distribution parity") {
  WorldConfig cfg;
  Dataset ds = make_splits(120, 20, 60, 4242, cfg);
  CHECK(ds.train.size() == 120);
  CHECK(ds.val.size() == 20);
  CHECK(ds.test.size() == 60);

  std::set<int> train_templates, test_templates;
  for (const auto& s : ds.train)
    for (const auto& f : s.frames) train_templates.insert(f.template_id);
  for (const auto& s : ds.test)
    for (const auto& f : s.frames) test_templates.insert(f.template_id);
  for (int t : train_templates) CHECK(test_templates.count(t) == 0);
  CHECK(!test_templates.empty());

  // Same seed reproduces identical splits.
  Dataset ds2 = make_splits(120, 20, 60, 4242, cfg);
  for (size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(ds.train[i].background == ds2.train[i].background);
    CHECK(ds.train[i].frames[0].sentence == ds2.train[i].frames[0].sentence);
  }

  // Distribution parity: background frequencies within 5 points of uniform.
  auto bg_fracs = [](const std::vector<StorySample>& xs) {
    std::map<int, double> f;
    for (const auto& s : xs) f[s.background] += 1.0 / static_cast<double>(xs.size());
    return f;
  };
  auto trf = bg_fracs(ds.train);
  for (auto& [bg, frac] : trf) CHECK(std::abs(frac - 0.25) < 0.15);
}
