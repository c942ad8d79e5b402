#pragma once

#include <stdexcept>
#include <vector>

namespace cmota::tok {

enum class Modality { Text, Image };

// Reserved special token indices inside the text vocabulary.
inline constexpr int kPad = 0;
inline constexpr int kSos = 1;  // start of sentence
inline constexpr int kSoi = 2;  // start of image
inline constexpr int kEos = 3;
inline constexpr int kNumSpecials = 4;

// Modality-tagged index sequence. Text sequences are stored padded to
// capacity with the true length recorded; image sequences are always exactly
// the grid size.
struct TokenSequence {
  Modality modality = Modality::Text;
  std::vector<int> indices;
  int length = 0;  // valid prefix; == indices.size() for images

  std::vector<int> valid() const {
    return std::vector<int>(indices.begin(), indices.begin() + length);
  }
};

}  // namespace cmota::tok
