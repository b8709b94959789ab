#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "bskim/errors.hpp"
#include "bskim/numerics/tensor.hpp"

namespace bskim {

// Inclusive token range [first, last].
struct Span {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t length() const { return last - first + 1; }
  bool contains(std::size_t i) const { return i >= first && i <= last; }
  bool overlaps(std::size_t a, std::size_t b) const { return a <= last && first <= b; }
  friend bool operator==(const Span&, const Span&) = default;
};

enum class BlockKind { question, passage, pad, mixed };

inline const char* to_string(BlockKind k) {
  switch (k) {
    case BlockKind::question: return "question";
    case BlockKind::passage: return "passage";
    case BlockKind::pad: return "pad";
    case BlockKind::mixed: return "mixed";
  }
  return "?";
}

// Question blocks (and the legacy `mixed` kind) are protected: never skimmed,
// never in the loss.
inline bool is_protected(BlockKind k) { return k == BlockKind::question || k == BlockKind::mixed; }

struct BlockSpec {
  std::size_t block_size = 1;
  std::size_t padded_length = 0;  // num_blocks * block_size
  std::size_t question_end = 0;   // last index of the question segment ([CLS] q [SEP])
  std::size_t pad_start = 0;      // first pad position
  std::vector<BlockKind> kinds;

  std::size_t num_blocks() const { return kinds.size(); }
  std::size_t begin(std::size_t j) const { return j * block_size; }
  std::size_t end(std::size_t j) const { return (j + 1) * block_size; }  // exclusive
  std::size_t block_of(std::size_t token) const { return token / block_size; }

  std::vector<std::size_t> blocks_of_kind(BlockKind k) const {
    std::vector<std::size_t> r;
    for (std::size_t j = 0; j < kinds.size(); ++j)
      if (kinds[j] == k) r.push_back(j);
    return r;
  }
};

// Splits a sequence of seq_len positions into ceil(seq_len / k) blocks.
// `question_end` is the last index of the question segment (so [0, question_end]
// holds [CLS], question tokens and the first [SEP]); positions >= pad_start
// are padding.
inline BlockSpec partition_blocks(std::size_t seq_len, std::size_t k, std::size_t question_end,
                                  std::size_t pad_start) {
  if (k == 0) throw ConfigError("partition_blocks: block size must be >= 1");
  if (k > seq_len)
    throw ConfigError("partition_blocks: block size " + std::to_string(k) + " exceeds sequence length " +
                      std::to_string(seq_len));
  const std::size_t nb = (seq_len + k - 1) / k;
  if (question_end >= pad_start)
    throw DataError("partition_blocks: question segment runs into padding");
  BlockSpec s;
  s.block_size = k;
  s.padded_length = nb * k;
  s.question_end = question_end;
  s.pad_start = std::min(pad_start, seq_len);
  s.kinds.resize(nb);
  for (std::size_t j = 0; j < nb; ++j) {
    const std::size_t a = j * k, b = (j + 1) * k - 1;
    const bool has_question = a <= question_end;
    const bool has_passage = b > question_end && a < s.pad_start;
    // A boundary block holding both segments counts as question.
    if (has_question)
      s.kinds[j] = BlockKind::question;
    else if (has_passage)
      s.kinds[j] = BlockKind::passage;
    else
      s.kinds[j] = BlockKind::pad;
  }
  return s;
}

struct BlockLabels {
  std::vector<int> y;               // 1 = block holds answer (or evidence) tokens
  std::vector<bool> loss_mask;      // true only for passage blocks
  std::size_t positives() const {
    std::size_t n = 0;
    for (std::size_t j = 0; j < y.size(); ++j) n += (loss_mask[j] && y[j] == 1);
    return n;
  }
  std::size_t negatives() const {
    std::size_t n = 0;
    for (std::size_t j = 0; j < y.size(); ++j) n += (loss_mask[j] && y[j] == 0);
    return n;
  }
};

// y_j = 1 iff block j overlaps the answer span (or, when given, any evidence span).
inline BlockLabels block_labels(const BlockSpec& spec, Span answer, const std::vector<Span>& evidence = {}) {
  if (answer.first > answer.last || answer.last >= spec.pad_start)
    throw DataError("block_labels: answer span [" + std::to_string(answer.first) + "," +
                    std::to_string(answer.last) + "] outside the sequence");
  if (answer.first <= spec.question_end)
    throw DataError("block_labels: answer overlaps the question segment");
  BlockLabels l;
  l.y.assign(spec.num_blocks(), 0);
  l.loss_mask.assign(spec.num_blocks(), false);
  for (std::size_t j = 0; j < spec.num_blocks(); ++j) {
    const std::size_t a = spec.begin(j), b = spec.end(j) - 1;
    bool hit = answer.overlaps(a, b);
    for (const Span& e : evidence) hit = hit || e.overlaps(a, b);
    l.y[j] = hit ? 1 : 0;
    l.loss_mask[j] = spec.kinds[j] == BlockKind::passage;
  }
  return l;
}

// Diagonal k x k squares of one attention map [H, n, n], one tensor per block.
inline std::vector<Tensor> diagonal_slices(const Tensor& attn, std::size_t k) {
  if (attn.ndim() != 3 || attn.dim(1) != attn.dim(2))
    throw DimensionError("diagonal_slices: expected [H,n,n], got " + shape_str(attn.shape()));
  const std::size_t H = attn.dim(0), n = attn.dim(1);
  if (k == 0 || n % k != 0)
    throw DimensionError("diagonal_slices: length " + std::to_string(n) + " not a multiple of block size " +
                         std::to_string(k));
  std::vector<Tensor> out;
  for (std::size_t j = 0; j < n / k; ++j) {
    Tensor s({H, k, k});
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t r = 0; r < k; ++r)
        for (std::size_t c = 0; c < k; ++c) s.at(h, r, c) = attn.at(h, j * k + r, j * k + c);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace bskim
