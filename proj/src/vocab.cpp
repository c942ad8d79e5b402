#include "cmota/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace cmota::tok {

namespace {
const char* kSpecialNames[kNumSpecials] = {"<pad>", "<sos>", "<soi>", "<eos>"};
}

std::string Vocab::normalize(const std::string& sentence) {
  std::string out;
  bool in_space = true;
  for (char ch : sentence) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::vector<std::string> Vocab::split_words(const std::string& sentence) {
  std::istringstream ss(normalize(sentence));
  std::vector<std::string> words;
  std::string w;
  while (ss >> w) words.push_back(w);
  return words;
}

Vocab Vocab::build(const std::vector<std::string>& corpus) {
  std::set<std::string> unique;
  for (const auto& sentence : corpus)
    for (const auto& w : split_words(sentence)) unique.insert(w);
  std::vector<std::string> words(kNumSpecials);
  for (int i = 0; i < kNumSpecials; ++i) words[static_cast<size_t>(i)] = kSpecialNames[i];
  words.insert(words.end(), unique.begin(), unique.end());
  return from_words(std::move(words));
}

Vocab Vocab::from_words(std::vector<std::string> index_to_word) {
  Vocab v;
  v.index_to_word_ = std::move(index_to_word);
  for (size_t i = 0; i < v.index_to_word_.size(); ++i) {
    if (!v.word_to_index_.emplace(v.index_to_word_[i], static_cast<int>(i)).second)
      throw std::runtime_error("vocab: duplicate word '" + v.index_to_word_[i] + "'");
  }
  return v;
}

int Vocab::word_index(const std::string& w) const {
  auto it = word_to_index_.find(w);
  if (it == word_to_index_.end()) throw OovError("out-of-vocabulary word '" + w + "'");
  return it->second;
}

const std::string& Vocab::word(int index) const {
  if (index < 0 || index >= size()) throw std::out_of_range("vocab index " + std::to_string(index));
  return index_to_word_[static_cast<size_t>(index)];
}

TokenSequence Vocab::encode(const std::string& sentence, int capacity) const {
  const std::vector<std::string> words = split_words(sentence);
  if (static_cast<int>(words.size()) + 1 > capacity)
    throw std::runtime_error("sentence longer than text capacity: '" + sentence + "'");
  TokenSequence seq;
  seq.modality = Modality::Text;
  seq.indices.assign(static_cast<size_t>(capacity), kPad);
  int pos = 0;
  for (const auto& w : words) seq.indices[static_cast<size_t>(pos++)] = word_index(w);
  seq.indices[static_cast<size_t>(pos++)] = kEos;
  seq.length = pos;
  return seq;
}

std::string Vocab::decode(const TokenSequence& seq) const {
  std::string out;
  for (int i = 0; i < seq.length; ++i) {
    const int ix = seq.indices[static_cast<size_t>(i)];
    if (ix == kEos || ix == kPad) break;
    if (ix == kSos || ix == kSoi) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(ix);
  }
  return out;
}

}  // namespace cmota::tok
