#pragma once

#include <string>
#include <vector>

#include "bskim/errors.hpp"

namespace bskim {

// Ideal speedup when per-layer cost is linear in sequence length. retentions[j]
// is the fraction of tokens layer j keeps relative to the previous layer, so
// layer i runs on prod_{j<=i} r_j of the input:
//
//   speedup = L / sum_{i=1..L} prod_{j=1..i} r_j
inline double analytical_speedup(const std::vector<double>& retentions, std::size_t num_layers) {
  if (retentions.size() != num_layers)
    throw DomainError("analytical_speedup: expected " + std::to_string(num_layers) + " retentions, got " +
                      std::to_string(retentions.size()));
  if (num_layers == 0) throw DomainError("analytical_speedup: need at least one layer");
  double denom = 0.0, prod = 1.0;
  for (double r : retentions) {
    if (!(r > 0.0) || r > 1.0) throw DomainError("analytical_speedup: retention " + std::to_string(r) + " not in (0,1]");
    prod *= r;
    denom += prod;
  }
  return static_cast<double>(num_layers) / denom;
}

// Per-layer retentions from the token counts each layer processed.
inline std::vector<double> retentions_from_lengths(const std::vector<std::size_t>& lengths) {
  std::vector<double> r;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    const double prev = static_cast<double>(i == 0 ? lengths[0] : lengths[i - 1]);
    r.push_back(prev > 0.0 ? static_cast<double>(lengths[i]) / prev : 1.0);
  }
  return r;
}

}  // namespace bskim
