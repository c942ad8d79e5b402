#include "cmota/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "cmota/rng.hpp"

namespace cmota::tok {

namespace {

using Patch = std::vector<double>;

double sq_dist(const Patch& a, const Patch& b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

void extract_patches(const img::ImageF64& im, int patch, std::vector<Patch>& out) {
  if (im.width % patch != 0 || im.height % patch != 0)
    throw std::runtime_error("image dimensions not divisible by patch size");
  for (int py = 0; py < im.height / patch; ++py)
    for (int px = 0; px < im.width / patch; ++px) {
      Patch p;
      p.reserve(static_cast<size_t>(patch) * patch * im.channels);
      for (int y = 0; y < patch; ++y)
        for (int x = 0; x < patch; ++x)
          for (int c = 0; c < im.channels; ++c) p.push_back(im.at(py * patch + y, px * patch + x, c));
      out.push_back(std::move(p));
    }
}

int nearest_entry(const Patch& p, const std::vector<Patch>& entries) {
  int best = 0;
  double best_d = sq_dist(p, entries[0]);
  for (size_t j = 1; j < entries.size(); ++j) {
    const double d = sq_dist(p, entries[j]);
    if (d < best_d) {  // strict: ties keep the lowest index
      best_d = d;
      best = static_cast<int>(j);
    }
  }
  return best;
}

}  // namespace

Codebook Codebook::fit(const std::vector<img::ImageU8>& images, int k, int patch, uint64_t seed,
                       int max_iters) {
  if (images.empty()) throw std::runtime_error("fit_codebook: no images");
  if (k < 2) throw std::runtime_error("fit_codebook: K must be at least 2");
  const int channels = images[0].channels;
  for (const auto& im : images)
    if (im.channels != channels || im.width != images[0].width || im.height != images[0].height)
      throw std::runtime_error("fit_codebook: images must share dimensions");

  // Deduplicate patches with multiplicities; the sample set is tiny compared
  // to the raw patch stream and the weighted k-means result is identical.
  std::map<std::vector<uint8_t>, int64_t> histogram;
  {
    std::vector<Patch> patches;
    for (const auto& im : images) {
      patches.clear();
      extract_patches(img::ImageF64::from_u8(im), patch, patches);
      for (const auto& p : patches) {
        std::vector<uint8_t> key(p.size());
        for (size_t i = 0; i < p.size(); ++i) key[i] = static_cast<uint8_t>(p[i]);
        histogram[key] += 1;
      }
    }
  }
  const size_t distinct = histogram.size();
  if (static_cast<size_t>(k) > distinct)
    throw std::runtime_error("fit_codebook: K=" + std::to_string(k) + " exceeds distinct patch count " +
                             std::to_string(distinct));

  std::vector<Patch> points;
  std::vector<double> weight;
  points.reserve(distinct);
  for (const auto& [key, cnt] : histogram) {
    Patch p(key.begin(), key.end());
    points.push_back(std::move(p));
    weight.push_back(static_cast<double>(cnt));
  }

  Rng rng(seed);
  // k-means++ over the weighted point set.
  std::vector<Patch> centers;
  std::vector<double> d2(points.size());
  {
    double total_w = 0.0;
    for (double w : weight) total_w += w;
    double pick = rng.next_real() * total_w;
    size_t first = 0;
    for (size_t i = 0; i < points.size(); ++i) {
      pick -= weight[i];
      if (pick <= 0.0) {
        first = i;
        break;
      }
    }
    centers.push_back(points[first]);
    while (static_cast<int>(centers.size()) < k) {
      double total = 0.0;
      for (size_t i = 0; i < points.size(); ++i) {
        d2[i] = sq_dist(points[i], centers[0]);
        for (size_t c = 1; c < centers.size(); ++c) d2[i] = std::min(d2[i], sq_dist(points[i], centers[c]));
        d2[i] *= weight[i];
        total += d2[i];
      }
      if (total <= 0.0) throw std::runtime_error("fit_codebook: degenerate point set during init");
      double r = rng.next_real() * total;
      size_t chosen = points.size() - 1;
      for (size_t i = 0; i < points.size(); ++i) {
        r -= d2[i];
        if (r <= 0.0) {
          chosen = i;
          break;
        }
      }
      centers.push_back(points[chosen]);
    }
  }

  // Lloyd iterations with deterministic empty-cluster reseeding.
  std::vector<int> assign(points.size(), -1);
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    for (size_t i = 0; i < points.size(); ++i) {
      const int a = nearest_entry(points[i], centers);
      if (a != assign[i]) {
        assign[i] = a;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    std::vector<Patch> sums(centers.size(), Patch(points[0].size(), 0.0));
    std::vector<double> counts(centers.size(), 0.0);
    for (size_t i = 0; i < points.size(); ++i) {
      counts[static_cast<size_t>(assign[i])] += weight[i];
      for (size_t j = 0; j < points[i].size(); ++j)
        sums[static_cast<size_t>(assign[i])][j] += weight[i] * points[i][j];
    }
    for (size_t c = 0; c < centers.size(); ++c) {
      if (counts[c] > 0.0) {
        for (size_t j = 0; j < sums[c].size(); ++j) centers[c][j] = sums[c][j] / counts[c];
      } else {
        // Reseed on the point farthest from its assigned center.
        size_t far = 0;
        double far_d = -1.0;
        for (size_t i = 0; i < points.size(); ++i) {
          const double d = sq_dist(points[i], centers[static_cast<size_t>(assign[i])]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centers[c] = points[far];
      }
    }
  }

  std::sort(centers.begin(), centers.end());
  for (size_t c = 1; c < centers.size(); ++c)
    if (centers[c] == centers[c - 1]) throw std::runtime_error("fit_codebook: duplicate entries after fitting");

  Codebook cb;
  cb.patch_ = patch;
  cb.channels_ = channels;
  cb.entries_ = std::move(centers);
  return cb;
}

TokenSequence Codebook::quantize(const img::ImageF64& image) const {
  std::vector<Patch> patches;
  extract_patches(image, patch_, patches);
  TokenSequence seq;
  seq.modality = Modality::Image;
  seq.indices.reserve(patches.size());
  for (const auto& p : patches) seq.indices.push_back(nearest_entry(p, entries_));
  seq.length = static_cast<int>(seq.indices.size());
  return seq;
}

img::ImageF64 Codebook::dequantize(const TokenSequence& tokens, int width, int height) const {
  if (width % patch_ != 0 || height % patch_ != 0)
    throw std::runtime_error("dequantize: dimensions not divisible by patch size");
  const int gw = width / patch_, gh = height / patch_;
  if (static_cast<int>(tokens.indices.size()) != gw * gh)
    throw std::runtime_error("dequantize: token count does not match grid");
  img::ImageF64 out;
  out.width = width;
  out.height = height;
  out.channels = channels_;
  out.values.assign(static_cast<size_t>(width) * height * channels_, 0.0);
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      const int ix = tokens.indices[static_cast<size_t>(py) * gw + px];
      if (ix < 0 || ix >= size()) throw std::runtime_error("dequantize: token index out of codebook range");
      const Patch& e = entries_[static_cast<size_t>(ix)];
      size_t pos = 0;
      for (int y = 0; y < patch_; ++y)
        for (int x = 0; x < patch_; ++x)
          for (int c = 0; c < channels_; ++c) out.at(py * patch_ + y, px * patch_ + x, c) = e[pos++];
    }
  return out;
}

double Codebook::quantization_mse(const std::vector<img::ImageU8>& images) const {
  double total = 0.0;
  size_t n = 0;
  for (const auto& im : images) {
    std::vector<Patch> patches;
    extract_patches(img::ImageF64::from_u8(im), patch_, patches);
    for (const auto& p : patches) {
      total += sq_dist(p, entries_[static_cast<size_t>(nearest_entry(p, entries_))]);
      n += p.size();
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

std::string Codebook::to_json() const {
  std::ostringstream os;
  os << "{\"patch\":" << patch_ << ",\"channels\":" << channels_ << ",\"entries\":[";
  for (size_t i = 0; i < entries_.size(); ++i) {
    os << (i ? "," : "") << "[";
    for (size_t j = 0; j < entries_[i].size(); ++j) os << (j ? "," : "") << entries_[i][j];
    os << "]";
  }
  os << "]}";
  return os.str();
}

Codebook Codebook::from_parts(int patch, int channels, std::vector<std::vector<double>> entries) {
  Codebook cb;
  cb.patch_ = patch;
  cb.channels_ = channels;
  cb.entries_ = std::move(entries);
  return cb;
}

}  // namespace cmota::tok
