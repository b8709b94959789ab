#pragma once

#include <cmath>
#include <limits>
#include <optional>

#include "bskim/numerics/tensor.hpp"
#include "bskim/skim/blocks.hpp"

namespace bskim {

inline constexpr std::size_t kMaxAnswerLength = 30;

// Best (s, e) with s <= e, both inside `passage`, e - s + 1 <= max_len,
// maximizing start[s] + end[e]. `logits` is [n, 2]. Positions with a non-finite
// logit are never chosen; returns nullopt when no valid pair remains.
inline std::optional<Span> decode_span(const Tensor& logits, Span passage, std::size_t max_len = kMaxAnswerLength) {
  const std::size_t n = logits.shape().at(0);
  if (passage.first >= n) return std::nullopt;
  const std::size_t last = std::min(passage.last, n - 1);
  double best = -std::numeric_limits<double>::infinity();
  std::optional<Span> out;
  for (std::size_t s = passage.first; s <= last; ++s) {
    const double ls = logits.at(s, 0);
    if (!std::isfinite(ls)) continue;
    for (std::size_t e = s; e <= last && e - s + 1 <= max_len; ++e) {
      const double le = logits.at(e, 1);
      if (!std::isfinite(le)) continue;
      if (ls + le > best) {
        best = ls + le;
        out = Span{s, e};
      }
    }
  }
  return out;
}

}  // namespace bskim
