#pragma once

#include <string>
#include <vector>

#include "bskim/data/vocab.hpp"
#include "bskim/skim/blocks.hpp"

namespace bskim {

// One packed extractive-QA instance: [CLS] question [SEP] passage [SEP].
struct QAExample {
  std::vector<std::size_t> tokens;  // unpadded
  Span question;                    // [CLS] .. first [SEP]
  Span passage;                     // passage tokens, excluding the final [SEP]
  Span answer;
  std::vector<Span> evidence;

  std::size_t pad_start() const noexcept { return tokens.size(); }

  std::vector<std::size_t> segments(std::size_t padded_length) const {
    std::vector<std::size_t> s(padded_length, 0);
    for (std::size_t i = question.last + 1; i < tokens.size(); ++i) s[i] = 1;
    return s;
  }

  void validate() const {
    if (tokens.empty()) throw DataError("example: empty token list");
    if (question.first != 0 || question.last >= passage.first)
      throw DataError("example: question segment must start at 0 and precede the passage");
    if (passage.last >= tokens.size() || passage.first > passage.last)
      throw DataError("example: passage span outside the token list");
    if (answer.first < passage.first || answer.last > passage.last || answer.first > answer.last)
      throw DataError("example: answer span [" + std::to_string(answer.first) + "," + std::to_string(answer.last) +
                      "] not inside passage [" + std::to_string(passage.first) + "," +
                      std::to_string(passage.last) + "]");
    for (const auto& e : evidence)
      if (e.first < passage.first || e.last > passage.last || e.first > e.last)
        throw DataError("example: evidence span not inside passage");
  }

  friend bool operator==(const QAExample&, const QAExample&) = default;
};

// Packs already-tokenized question and passage ids. Spans are relative to the
// passage ids and are shifted into packed coordinates.
inline QAExample pack_example(const std::vector<std::size_t>& question, const std::vector<std::size_t>& passage,
                              Span answer_in_passage, const std::vector<Span>& evidence_in_passage = {}) {
  QAExample ex;
  ex.tokens.push_back(special::cls);
  ex.tokens.insert(ex.tokens.end(), question.begin(), question.end());
  ex.tokens.push_back(special::sep);
  const std::size_t off = ex.tokens.size();
  ex.tokens.insert(ex.tokens.end(), passage.begin(), passage.end());
  ex.tokens.push_back(special::sep);
  ex.question = {0, off - 1};
  ex.passage = {off, off + passage.size() - 1};
  ex.answer = {answer_in_passage.first + off, answer_in_passage.last + off};
  for (const auto& e : evidence_in_passage) ex.evidence.push_back({e.first + off, e.last + off});
  ex.validate();
  return ex;
}

}  // namespace bskim
