#pragma once

#include <string>

#include "bskim/errors.hpp"
#include "bskim/skim/blocks.hpp"

namespace bskim {

// Attention from rows [src.first, src.last] to columns [dst.first, dst.last]:
// summed over the destination, averaged over the source rows. `attn(i, j)`
// returns one attention weight; `n` is the matrix side.
template <typename At>
double block_attention(const At& attn, std::size_t n, Span src, Span dst) {
  if (src.first > src.last || dst.first > dst.last) throw DomainError("block_attention: empty range");
  if (src.last >= n || dst.last >= n)
    throw DomainError("block_attention: range exceeds matrix side " + std::to_string(n));
  double s = 0.0;
  for (std::size_t i = src.first; i <= src.last; ++i)
    for (std::size_t j = dst.first; j <= dst.last; ++j) s += static_cast<double>(attn(i, j));
  return s / static_cast<double>(src.length());
}

// Tensor [N, N] overload.
inline double block_attention(const Tensor& attn, Span src, Span dst) {
  if (attn.ndim() != 2 || attn.shape()[0] != attn.shape()[1])
    throw DimensionError("block_attention: expected a square matrix, got " + shape_str(attn.shape()));
  return block_attention([&](std::size_t i, std::size_t j) { return attn.at(i, j); }, attn.shape()[0], src, dst);
}

}  // namespace bskim
