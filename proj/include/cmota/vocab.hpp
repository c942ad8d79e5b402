#pragma once

#include <map>
#include <string>
#include <vector>

#include "cmota/token_sequence.hpp"

namespace cmota::tok {

struct OovError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Word-level vocabulary with fixed special tokens at indices 0..3.
// Construction is deterministic: corpus words are sorted lexicographically.
class Vocab {
 public:
  Vocab() = default;

  static Vocab build(const std::vector<std::string>& corpus);

  int size() const { return static_cast<int>(index_to_word_.size()); }
  int word_index(const std::string& w) const;         // throws OovError
  const std::string& word(int index) const;           // includes special names
  bool contains(const std::string& w) const { return word_to_index_.count(w) != 0; }

  // Whitespace tokenization of a normalized (lowercase, single-spaced)
  // sentence; appends EOS and pads to capacity.
  TokenSequence encode(const std::string& sentence, int capacity) const;
  std::string decode(const TokenSequence& seq) const;

  static std::string normalize(const std::string& sentence);
  static std::vector<std::string> split_words(const std::string& sentence);

  const std::vector<std::string>& words() const { return index_to_word_; }
  static Vocab from_words(std::vector<std::string> index_to_word);

 private:
  std::vector<std::string> index_to_word_;
  std::map<std::string, int> word_to_index_;
};

}  // namespace cmota::tok
