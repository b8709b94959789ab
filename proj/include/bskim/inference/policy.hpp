#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "bskim/errors.hpp"

namespace bskim {

// Block-dropping rule. A scored passage block survives a layer when its
// positive-class probability is at least `threshold`; with `top_fraction`
// set, the best ceil(fraction * candidates) blocks survive instead. Question
// blocks are never candidates. Pad blocks score 0.
struct SkimPolicy {
  double threshold = 0.5;
  std::optional<std::vector<std::size_t>> active_layers;  // unset: every layer but 0
  std::optional<double> top_fraction;

  bool is_active(std::size_t layer, std::size_t num_layers) const {
    if (active_layers) return std::find(active_layers->begin(), active_layers->end(), layer) != active_layers->end();
    return layer > 0 && layer < num_layers;
  }

  // True when no block can ever be dropped, so predictors need not run.
  bool is_noop(std::size_t num_layers) const {
    if (active_layers && active_layers->empty()) return true;
    if (top_fraction) return *top_fraction >= 1.0;
    (void)num_layers;
    return threshold <= 0.0;
  }

  void validate(std::size_t num_layers) const {
    if (!(threshold >= 0.0 && threshold <= 1.0))
      throw ConfigError("skim policy: threshold must lie in [0, 1], got " + std::to_string(threshold));
    if (top_fraction && !(*top_fraction >= 0.0 && *top_fraction <= 1.0))
      throw ConfigError("skim policy: top_fraction must lie in [0, 1]");
    if (active_layers)
      for (std::size_t l : *active_layers)
        if (l >= num_layers)
          throw ConfigError("skim policy: active layer " + std::to_string(l) + " out of range for " +
                            std::to_string(num_layers) + " layers");
  }
};

// Parses "1,2,3"; the empty string yields an empty list.
inline std::vector<std::size_t> parse_layer_list(const std::string& s) {
  std::vector<std::size_t> out;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t j = s.find(',', i);
    if (j == std::string::npos) j = s.size();
    const std::string item = s.substr(i, j - i);
    if (item.empty() || item.find_first_not_of("0123456789") != std::string::npos)
      throw ConfigError("bad layer list '" + s + "'");
    out.push_back(std::stoul(item));
    i = j + 1;
  }
  return out;
}

}  // namespace bskim
