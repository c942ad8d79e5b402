#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "cmota/codebook.hpp"
#include "cmota/rng.hpp"
#include "cmota/vocab.hpp"

using namespace cmota;
using namespace cmota::tok;
using cmota::img::ImageF64;
using cmota::img::ImageU8;

namespace {

ImageU8 flat_image(int w, int h, uint8_t r, uint8_t g, uint8_t b) {
  ImageU8 im = ImageU8::make(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      im.at(y, x, 0) = r;
      im.at(y, x, 1) = g;
      im.at(y, x, 2) = b;
    }
  return im;
}

ImageU8 random_image(int w, int h, Rng& rng) {
  ImageU8 im = ImageU8::make(w, h, 3);
  for (auto& p : im.pixels) p = static_cast<uint8_t>(rng.next_below(256));
  return im;
}

}  // namespace

TEST_CASE("vocab: enumeration, specials, determinism") {
  Vocab v = Vocab::build({"a b", "b c"});
  CHECK(v.size() == kNumSpecials + 3);
  CHECK(v.word(kPad) == "<pad>");
  CHECK(v.word_index("a") == kNumSpecials + 0);
  CHECK(v.word_index("b") == kNumSpecials + 1);
  CHECK(v.word_index("c") == kNumSpecials + 2);

  Vocab v2 = Vocab::build({"a b", "b c"});
  CHECK(v.words() == v2.words());

  CHECK_THROWS_AS(v.word_index("zebra"), OovError);
}

TEST_CASE("encode/decode round trip and padding") {
  Vocab v = Vocab::build({"pororo walks", "snow falls"});
  TokenSequence seq = v.encode("pororo walks", 8);
  CHECK(seq.length == 3);  // two words + EOS
  CHECK(static_cast<int>(seq.indices.size()) == 8);
  CHECK(seq.indices[2] == kEos);
  CHECK(seq.indices[3] == kPad);
  CHECK(v.decode(seq) == "pororo walks");

  // empty sentence: just EOS, padded
  TokenSequence empty = v.encode("", 4);
  CHECK(empty.length == 1);
  CHECK(empty.indices[0] == kEos);
  CHECK(v.decode(empty) == "");

  // normalization: case and whitespace collapse
  CHECK(v.decode(v.encode("  Pororo   WALKS ", 8)) == "pororo walks");

  try {
    v.encode("pororo zzz", 8);
    CHECK(false);
  } catch (const OovError& e) {
    CHECK(std::string(e.what()).find("zzz") != std::string::npos);
  }
}

TEST_CASE("codebook: two flat colors recovered exactly") {
  std::vector<ImageU8> images = {flat_image(16, 16, 200, 10, 10), flat_image(16, 16, 10, 10, 200)};
  Codebook cb = Codebook::fit(images, 2, 8, 7);
  CHECK(cb.size() == 2);
  // Entries are the two flat patches, in lexicographic order.
  std::set<double> firsts = {cb.entry(0)[0], cb.entry(1)[0]};
  CHECK(firsts == std::set<double>({10.0, 200.0}));

  // Determinism: bit-identical refit.
  Codebook cb2 = Codebook::fit(images, 2, 8, 7);
  CHECK(cb.entries() == cb2.entries());

  // K above the distinct patch count is an error.
  CHECK_THROWS(Codebook::fit(images, 3, 8, 7));
}

TEST_CASE("quantize picks the brute-force nearest entry, ties to lowest index") {
  Rng rng(99);
  std::vector<ImageU8> train;
  for (int i = 0; i < 6; ++i) train.push_back(random_image(16, 16, rng));
  Codebook cb = Codebook::fit(train, 5, 8, 3);

  for (int trial = 0; trial < 100; ++trial) {
    ImageU8 im = random_image(16, 16, rng);
    TokenSequence seq = cb.quantize(im);
    ImageF64 real = ImageF64::from_u8(im);
    // Linear-scan oracle per patch.
    int pi = 0;
    for (int py = 0; py < 2; ++py)
      for (int px = 0; px < 2; ++px, ++pi) {
        int best = -1;
        double best_d = 1e300;
        for (int e = 0; e < cb.size(); ++e) {
          double d = 0.0;
          size_t pos = 0;
          for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
              for (int c = 0; c < 3; ++c) {
                const double diff = real.at(py * 8 + y, px * 8 + x, c) - cb.entry(e)[pos++];
                d += diff * diff;
              }
          if (d < best_d) {
            best_d = d;
            best = e;
          }
        }
        CHECK(seq.indices[static_cast<size_t>(pi)] == best);
      }
  }
}

TEST_CASE("quantize-dequantize identity on token grids") {
  Rng rng(123);
  std::vector<ImageU8> train;
  for (int i = 0; i < 8; ++i) train.push_back(random_image(32, 32, rng));
  Codebook cb = Codebook::fit(train, 9, 8, 5);

  for (int trial = 0; trial < 50; ++trial) {
    TokenSequence t;
    t.modality = Modality::Image;
    for (int i = 0; i < 16; ++i) t.indices.push_back(rng.next_int(0, cb.size() - 1));
    t.length = 16;
    ImageF64 im = cb.dequantize(t, 32, 32);
    TokenSequence t2 = cb.quantize(im);
    CHECK(t2.indices == t.indices);
  }

  // constant image: all tokens equal
  TokenSequence flat = cb.quantize(flat_image(32, 32, 77, 77, 77));
  for (int i = 1; i < flat.length; ++i) CHECK(flat.indices[static_cast<size_t>(i)] == flat.indices[0]);

  // image assembled from codebook patches: exact round trip through u8 is not
  // guaranteed for arbitrary centroids, but token round trip is
  TokenSequence base;
  base.modality = Modality::Image;
  base.indices = {0, 1, 2, 3, 4, 5, 6, 7, 8, 0, 1, 2, 3, 4, 5, 6};
  base.length = 16;
  CHECK(cb.quantize(cb.dequantize(base, 32, 32)).indices == base.indices);
}

TEST_CASE("fitted codebook beats a random-entry codebook on held-out data") {
  Rng rng(321);
  // Mixture of 4 color clusters with mild noise.
  auto sample = [&](Rng& r) {
    static const uint8_t base[4][3] = {{200, 20, 20}, {20, 200, 20}, {20, 20, 200}, {230, 230, 30}};
    const int c = r.next_int(0, 3);
    ImageU8 im = ImageU8::make(16, 16, 3);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          int v = base[c][ch] + r.next_int(-12, 12);
          im.at(y, x, ch) = static_cast<uint8_t>(std::clamp(v, 0, 255));
        }
    return im;
  };
  std::vector<ImageU8> train, held_out;
  for (int i = 0; i < 40; ++i) train.push_back(sample(rng));
  for (int i = 0; i < 20; ++i) held_out.push_back(sample(rng));

  Codebook fitted = Codebook::fit(train, 4, 8, 11);

  // Random-K-patch baseline: K raw patches drawn from the training set.
  std::vector<std::vector<double>> raw;
  Rng pick(5);
  for (int i = 0; i < 4; ++i) {
    const ImageU8& im = train[pick.next_below(train.size())];
    const int py = pick.next_int(0, 1) * 8, px = pick.next_int(0, 1) * 8;
    std::vector<double> p;
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        for (int c = 0; c < 3; ++c) p.push_back(im.at(py + y, px + x, c));
    raw.push_back(std::move(p));
  }
  Codebook random_cb = Codebook::from_parts(8, 3, raw);

  CHECK(fitted.quantization_mse(held_out) <= random_cb.quantization_mse(held_out));
}
