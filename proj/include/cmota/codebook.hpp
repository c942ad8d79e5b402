#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmota/image.hpp"
#include "cmota/token_sequence.hpp"

namespace cmota::tok {

// Deterministic patch vector quantizer: k-means (k-means++ init, fixed seed,
// capped Lloyd iterations) over all P x P patches of the fitting set.
// Entries are canonicalized by lexicographic sort so the fitted artifact is a
// pure function of (images, k, patch, seed).
class Codebook {
 public:
  Codebook() = default;

  static Codebook fit(const std::vector<img::ImageU8>& images, int k, int patch, uint64_t seed,
                      int max_iters = 50);

  int size() const { return static_cast<int>(entries_.size()); }
  int patch_size() const { return patch_; }
  int channels() const { return channels_; }
  int entry_dim() const { return patch_ * patch_ * channels_; }
  const std::vector<double>& entry(int i) const { return entries_[static_cast<size_t>(i)]; }
  const std::vector<std::vector<double>>& entries() const { return entries_; }

  // Nearest entry per patch in row-major patch order; ties break to the
  // lowest index.
  TokenSequence quantize(const img::ImageF64& image) const;
  TokenSequence quantize(const img::ImageU8& image) const {
    return quantize(img::ImageF64::from_u8(image));
  }
  img::ImageF64 dequantize(const TokenSequence& tokens, int width, int height) const;

  double quantization_mse(const std::vector<img::ImageU8>& images) const;

  std::string to_json() const;

  static Codebook from_parts(int patch, int channels, std::vector<std::vector<double>> entries);

 private:
  int patch_ = 0;
  int channels_ = 0;
  std::vector<std::vector<double>> entries_;
};

}  // namespace cmota::tok
