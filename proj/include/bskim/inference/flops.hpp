#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"

#include "bskim/model/config.hpp"
#include "bskim/skim/predictor.hpp"

namespace bskim {

struct LayerFlops {
  std::size_t length = 0;
  double attention = 0.0;
  double ffn = 0.0;
  double predictor = 0.0;
  double total() const { return attention + ffn + predictor; }
};

struct FlopsReport {
  std::vector<LayerFlops> layers;  // skimmed run
  double vanilla_total = 0.0;      // every layer at full length, no predictors
  double skimmed_total = 0.0;
  double ratio() const { return skimmed_total > 0.0 ? vanilla_total / skimmed_total : 1.0; }
};

// Encoder-layer FLOPs at length n (1 MAC = 2 FLOPs):
//   attention = 2 * (4 n d^2 + 2 H n^2 d_k)    projections, QK^T and AV
//   ffn       = 2 * (2 n d ffn)
inline double attention_flops(const ModelConfig& c, std::size_t n) {
  const double N = static_cast<double>(n), d = static_cast<double>(c.hidden_dim);
  return 2.0 * (4.0 * N * d * d + 2.0 * static_cast<double>(c.num_heads) * N * N * static_cast<double>(c.head_dim()));
}

inline double ffn_flops(const ModelConfig& c, std::size_t n) {
  return 2.0 * (2.0 * static_cast<double>(n) * static_cast<double>(c.hidden_dim) * static_cast<double>(c.ffn_dim));
}

inline double layer_flops(const ModelConfig& c, std::size_t n) { return attention_flops(c, n) + ffn_flops(c, n); }

// FLOPs of the relevance CNN scoring `blocks` blocks.
inline double predictor_flops(const ModelConfig& mc, const PredictorConfig& pc, std::size_t blocks) {
  const std::size_t k = pc.block_size, c1 = pc.conv1_channels, c2 = pc.conv2_channels, c3 = pc.conv3_channels;
  const std::size_t H = mc.num_heads;
  std::size_t s = k;
  double macs = static_cast<double>(s * s * c1 * H * 9);
  double elem = static_cast<double>(s * s * c1 * 3);  // batchnorm scale+shift, relu
  if (s >= 2) {
    elem += static_cast<double>(s * s * c1);
    s /= 2;
  }
  macs += static_cast<double>(s * s * c2 * c1 * 9);
  elem += static_cast<double>(s * s * c2 * 3);
  if (s >= 2) {
    elem += static_cast<double>(s * s * c2);
    s /= 2;
  }
  macs += static_cast<double>(s * s * c3 * c2);
  elem += static_cast<double>(s * s * c3);
  macs += static_cast<double>(s * s * c3 * 2);
  return (2.0 * macs + elem) * static_cast<double>(blocks);
}

// Counts every layer at its retained length. `scored_blocks[l]` is the number
// of blocks the predictor scored after layer l (0 when inactive); it may be
// empty for predictor-free runs.
inline FlopsReport flops_count(const ModelConfig& mc, const PredictorConfig& pc,
                               const std::vector<std::size_t>& per_layer_lengths,
                               const std::vector<std::size_t>& scored_blocks = {}) {
  if (per_layer_lengths.size() != mc.num_layers)
    throw DimensionError("flops_count: expected " + std::to_string(mc.num_layers) + " layer lengths, got " +
                         std::to_string(per_layer_lengths.size()));
  if (!scored_blocks.empty() && scored_blocks.size() != mc.num_layers)
    throw DimensionError("flops_count: scored block list length mismatch");
  FlopsReport r;
  const std::size_t full = per_layer_lengths.empty() ? 0 : per_layer_lengths.front();
  for (std::size_t l = 0; l < mc.num_layers; ++l) {
    LayerFlops lf;
    lf.length = per_layer_lengths[l];
    lf.attention = attention_flops(mc, lf.length);
    lf.ffn = ffn_flops(mc, lf.length);
    if (!scored_blocks.empty()) lf.predictor = predictor_flops(mc, pc, scored_blocks[l]);
    r.skimmed_total += lf.total();
    r.vanilla_total += layer_flops(mc, full);
    r.layers.push_back(lf);
  }
  return r;
}

inline nlohmann::ordered_json to_json(const FlopsReport& r) {
  nlohmann::ordered_json j;
  j["vanilla_total"] = r.vanilla_total;
  j["skimmed_total"] = r.skimmed_total;
  j["ratio"] = r.ratio();
  j["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : r.layers)
    j["layers"].push_back({{"length", l.length}, {"attention", l.attention}, {"ffn", l.ffn}, {"predictor", l.predictor}});
  return j;
}

}  // namespace bskim
