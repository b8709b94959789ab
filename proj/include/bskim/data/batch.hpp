#pragma once

#include <algorithm>
#include <vector>

#include "bskim/data/example.hpp"
#include "bskim/skim/blocks.hpp"

namespace bskim {

// One example padded to the batch length, with its block partition and labels.
struct BatchItem {
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> segments;
  std::vector<bool> pad_mask;  // true at padding
  BlockSpec spec;
  BlockLabels labels;
  std::size_t start = 0;  // answer targets
  std::size_t end = 0;
  const QAExample* source = nullptr;
};

inline std::size_t round_up(std::size_t n, std::size_t k) { return (n + k - 1) / k * k; }

inline BatchItem make_item(const QAExample& ex, std::size_t padded_length, std::size_t k, bool evidence_labels) {
  BatchItem it;
  it.token_ids = ex.tokens;
  it.token_ids.resize(padded_length, special::pad);
  it.segments = ex.segments(padded_length);
  it.pad_mask.assign(padded_length, false);
  for (std::size_t i = ex.pad_start(); i < padded_length; ++i) it.pad_mask[i] = true;
  it.spec = partition_blocks(padded_length, k, ex.question.last, ex.pad_start());
  it.labels = block_labels(it.spec, ex.answer, evidence_labels ? ex.evidence : std::vector<Span>{});
  it.start = ex.answer.first;
  it.end = ex.answer.last;
  it.source = &ex;
  return it;
}

// Pads every example to the longest one, rounded up to a multiple of k.
// With evidence_labels, evidence blocks are OR-ed into the positive labels.
inline std::vector<BatchItem> make_batch(const std::vector<const QAExample*>& examples, std::size_t k,
                                         bool evidence_labels = false) {
  std::size_t longest = 0;
  for (const auto* e : examples) longest = std::max(longest, e->tokens.size());
  const std::size_t padded = round_up(std::max<std::size_t>(longest, 1), k);
  std::vector<BatchItem> batch;
  batch.reserve(examples.size());
  for (const auto* e : examples) batch.push_back(make_item(*e, padded, k, evidence_labels));
  return batch;
}

inline std::vector<BatchItem> make_batch(const std::vector<QAExample>& examples, std::size_t k,
                                         bool evidence_labels = false) {
  std::vector<const QAExample*> ptrs;
  for (const auto& e : examples) ptrs.push_back(&e);
  return make_batch(ptrs, k, evidence_labels);
}

}  // namespace bskim
