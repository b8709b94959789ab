#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "bskim/inference/decode.hpp"
#include "bskim/inference/flops.hpp"
#include "bskim/inference/pass.hpp"

namespace bskim {

struct SkimState {
  std::size_t block_size = 1;
  std::vector<std::vector<std::size_t>> layer_blocks;  // retained block ids entering each layer
  std::vector<std::size_t> layer_lengths;              // tokens each layer processed
  std::vector<std::size_t> positions;                  // original index of each final row, increasing

  // Identity state for a sequence of n tokens and L layers.
  static SkimState identity(std::size_t n, std::size_t k, std::size_t layers) {
    SkimState s;
    s.block_size = k;
    std::vector<std::size_t> b((n + k - 1) / k);
    std::iota(b.begin(), b.end(), 0);
    s.layer_blocks.assign(layers, b);
    s.layer_lengths.assign(layers, n);
    s.positions.resize(n);
    std::iota(s.positions.begin(), s.positions.end(), 0);
    return s;
  }
};

struct SkimOutput {
  Tensor logits;  // [n, 2] over original positions; -inf where skimmed
  SkimState state;
  FlopsReport flops;
  std::optional<Span> prediction;
  bool all_passage_skimmed = false;
};

// Skimmed-coordinate span to original coordinates.
inline Span remap_span(Span skimmed, const SkimState& s) {
  if (skimmed.first > skimmed.last || skimmed.last >= s.positions.size())
    throw IndexError("remap_span: [" + std::to_string(skimmed.first) + ", " + std::to_string(skimmed.last) +
                     "] outside retained length " + std::to_string(s.positions.size()));
  return {s.positions[skimmed.first], s.positions[skimmed.last]};
}

// Original index to its row among the retained tokens.
inline std::size_t to_skimmed_index(std::size_t original, const SkimState& s) {
  auto it = std::lower_bound(s.positions.begin(), s.positions.end(), original);
  if (it == s.positions.end() || *it != original)
    throw IndexError("to_skimmed_index: position " + std::to_string(original) + " was skimmed");
  return static_cast<std::size_t>(it - s.positions.begin());
}

inline SkimOutput skim_forward(const BlockSkimModel& model, const BatchItem& item, const SkimPolicy& policy) {
  Graph g;
  g.set_grad_enabled(false);
  PassOptions opt;
  opt.skim = &policy;
  PassResult r = run_pass(model, g, item, opt);

  SkimOutput out;
  const std::size_t n = item.token_ids.size();
  out.logits = Tensor({n, 2}, -std::numeric_limits<double>::infinity());
  const Tensor& lv = r.logits.value();
  for (std::size_t i = 0; i < r.positions.size(); ++i) {
    out.logits.at(r.positions[i], 0) = lv.at(i, 0);
    out.logits.at(r.positions[i], 1) = lv.at(i, 1);
  }
  out.state.block_size = item.spec.block_size;
  out.state.layer_blocks = r.layer_blocks;
  out.state.layer_lengths = r.layer_lengths;
  out.state.positions = r.positions;

  std::vector<std::size_t> scored;
  for (const auto& s : r.scored) scored.push_back(s.size());
  out.flops = flops_count(model.model_config(), model.predictor_config(), r.layer_lengths, scored);

  out.all_passage_skimmed = true;
  for (std::size_t b : r.blocks)
    if (item.spec.kinds[b] == BlockKind::passage) out.all_passage_skimmed = false;
  if (item.source) out.prediction = decode_span(out.logits, item.source->passage);
  return out;
}

inline nlohmann::ordered_json to_json(const SkimState& s) {
  nlohmann::ordered_json j;
  j["block_size"] = s.block_size;
  j["layer_blocks"] = s.layer_blocks;
  j["layer_lengths"] = s.layer_lengths;
  std::vector<std::size_t> final_blocks;
  for (std::size_t p : s.positions)
    if (final_blocks.empty() || final_blocks.back() != p / s.block_size) final_blocks.push_back(p / s.block_size);
  j["final_blocks"] = final_blocks;
  return j;
}

inline SkimState skim_state_from_json(const nlohmann::json& j) {
  SkimState s;
  try {
    s.block_size = j.at("block_size").get<std::size_t>();
    s.layer_blocks = j.at("layer_blocks").get<std::vector<std::vector<std::size_t>>>();
    s.layer_lengths = j.at("layer_lengths").get<std::vector<std::size_t>>();
    for (std::size_t b : j.at("final_blocks").get<std::vector<std::size_t>>())
      for (std::size_t t = 0; t < s.block_size; ++t) s.positions.push_back(b * s.block_size + t);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("skim state: ") + e.what());
  }
  if (s.block_size == 0) throw ParseError("skim state: block_size must be >= 1");
  if (s.layer_blocks.size() != s.layer_lengths.size())
    throw ParseError("skim state: layer_blocks and layer_lengths differ in length");
  return s;
}

}  // namespace bskim
