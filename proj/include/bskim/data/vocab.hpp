#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "bskim/errors.hpp"

namespace bskim {

namespace special {
inline constexpr std::size_t pad = 0;
inline constexpr std::size_t unk = 1;
inline constexpr std::size_t cls = 2;
inline constexpr std::size_t sep = 3;
inline constexpr std::size_t count = 4;
}  // namespace special

struct TokenPiece {
  std::string text;       // lowercased
  std::size_t char_begin;  // offset into the source string
  std::size_t char_end;    // exclusive
};

// Splits on whitespace; every punctuation character becomes its own token.
// Bracketed specials such as "[CLS]" stay whole. Output is lowercased.
inline std::vector<TokenPiece> basic_tokenize(const std::string& text) {
  std::vector<TokenPiece> out;
  std::size_t i = 0;
  const std::size_t n = text.size();
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  auto is_punct = [](unsigned char c) { return c < 128 && std::ispunct(c) != 0; };
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
      continue;
    }
    if (c == '[') {
      const std::size_t close = text.find(']', i);
      if (close != std::string::npos && close - i <= 6) {
        bool word = close > i + 1;
        for (std::size_t j = i + 1; j < close; ++j) word = word && std::isupper(static_cast<unsigned char>(text[j]));
        if (word) {
          out.push_back({text.substr(i, close - i + 1), i, close + 1});
          i = close + 1;
          continue;
        }
      }
    }
    if (is_punct(c)) {
      out.push_back({std::string(1, static_cast<char>(c)), i, i + 1});
      ++i;
      continue;
    }
    std::size_t j = i;
    std::string w;
    while (j < n && !is_space(static_cast<unsigned char>(text[j])) && !is_punct(static_cast<unsigned char>(text[j]))) {
      w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(text[j]))));
      ++j;
    }
    out.push_back({std::move(w), i, j});
    i = j;
  }
  return out;
}

// Word <-> id table. Ids 0..3 are [PAD], [UNK], [CLS], [SEP]. While growing,
// unseen words get fresh ids until capacity; after that (or once frozen)
// they map to [UNK].
class Vocab {
 public:
  explicit Vocab(std::size_t capacity = 30000) : capacity_(capacity) {
    for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]"}) insert(s);
  }

  std::size_t insert(const std::string& w) {
    auto it = index_.find(w);
    if (it != index_.end()) return it->second;
    if (words_.size() >= capacity_) throw ConfigError("vocab: capacity " + std::to_string(capacity_) + " exhausted");
    index_.emplace(w, words_.size());
    words_.push_back(w);
    return words_.size() - 1;
  }

  std::size_t id(const std::string& w) {
    auto it = index_.find(w);
    if (it != index_.end()) return it->second;
    if (frozen_ || words_.size() >= capacity_) return special::unk;
    return insert(w);
  }

  std::size_t lookup(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? special::unk : it->second;
  }

  const std::string& word(std::size_t id) const {
    if (id >= words_.size()) throw IndexError("vocab: id " + std::to_string(id) + " out of range");
    return words_[id];
  }

  std::vector<std::size_t> encode(const std::string& text) {
    std::vector<std::size_t> ids;
    for (const auto& p : basic_tokenize(text)) ids.push_back(id(p.text));
    return ids;
  }

  std::string decode(const std::vector<std::size_t>& ids) const {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) s.push_back(' ');
      s += word(ids[i]);
    }
    return s;
  }

  void freeze() noexcept { frozen_ = true; }
  bool frozen() const noexcept { return frozen_; }
  std::size_t size() const noexcept { return words_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  const std::vector<std::string>& words() const noexcept { return words_; }

 private:
  std::size_t capacity_;
  bool frozen_ = false;
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace bskim
