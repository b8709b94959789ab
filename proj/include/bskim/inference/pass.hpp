#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "bskim/data/batch.hpp"
#include "bskim/inference/policy.hpp"
#include "bskim/model/model.hpp"

namespace bskim {

struct PassOptions {
  bool run_predictors = false;       // score retained passage blocks at every layer
  bool bn_training = false;          // batch statistics in the predictors
  bool capture_attention = false;
  const SkimPolicy* skim = nullptr;  // drop blocks between layers
};

struct PassResult {
  Var logits;                                          // [n_final, 2]
  std::vector<std::size_t> positions;                  // original index of each final row
  std::vector<std::size_t> blocks;                     // blocks alive after the last layer
  std::vector<Var> attention;                          // per layer, when captured
  std::vector<std::vector<std::size_t>> layer_blocks;  // blocks each layer ran on
  std::vector<std::size_t> layer_lengths;
  std::vector<std::vector<std::size_t>> scored;        // original ids scored after each layer
  std::vector<Var> block_logits;                       // [scored, 2] or invalid
  std::vector<std::vector<double>> block_probs;        // P(relevant) for `scored`
};

inline double positive_probability(const Tensor& logits, std::size_t row) {
  const double a = logits.at(row, 0), b = logits.at(row, 1);
  return 1.0 / (1.0 + std::exp(a - b));
}

// Forward over one padded example. Skim decisions are made after a layer
// completes; dropped blocks are removed from the hidden states before the
// next layer.
inline PassResult run_pass(const BlockSkimModel& model, Graph& g, const BatchItem& item, const PassOptions& opt) {
  const Encoder& enc = model.encoder();
  const std::size_t L = model.num_layers(), k = item.spec.block_size, nb = item.spec.num_blocks();
  if (k != model.predictor_config().block_size)
    throw ConfigError("block size " + std::to_string(k) + " does not match predictor block size " +
                      std::to_string(model.predictor_config().block_size));
  const bool skimming = opt.skim && !opt.skim->is_noop(L);
  if (opt.skim) opt.skim->validate(L);

  PassResult r;
  std::vector<std::size_t> pos(item.token_ids.size());
  std::iota(pos.begin(), pos.end(), 0);
  std::vector<std::size_t> blocks(nb);
  std::iota(blocks.begin(), blocks.end(), 0);
  std::vector<bool> mask = item.pad_mask;
  Var h = enc.embed(g, item.token_ids, item.segments, pos);

  for (std::size_t l = 0; l < L; ++l) {
    r.layer_blocks.push_back(blocks);
    r.layer_lengths.push_back(pos.size());
    auto out = enc.layer(g, l, h, mask);
    h = out.hidden;
    if (opt.capture_attention) r.attention.push_back(out.attention);

    const bool skim_here = skimming && opt.skim->is_active(l, L);
    std::vector<std::size_t> local, ids;
    if (opt.run_predictors || skim_here)
      for (std::size_t i = 0; i < blocks.size(); ++i)
        if (item.spec.kinds[blocks[i]] == BlockKind::passage) {
          local.push_back(i);
          ids.push_back(blocks[i]);
        }
    Var logits;
    std::vector<double> probs;
    if (!local.empty()) {
      Var slices = ops::diagonal_blocks(out.attention, k, local);
      logits = model.predictor(l).forward(g, slices, opt.bn_training);
      for (std::size_t i = 0; i < local.size(); ++i) probs.push_back(positive_probability(logits.value(), i));
    }
    r.scored.push_back(ids);
    r.block_logits.push_back(logits);
    r.block_probs.push_back(probs);

    if (!skim_here) continue;
    // Score every non-question block; pads get 0.
    std::vector<double> score(blocks.size(), 0.0);
    std::vector<bool> keep(blocks.size(), false);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (is_protected(item.spec.kinds[blocks[i]])) {
        keep[i] = true;
        continue;
      }
      candidates.push_back(i);
    }
    for (std::size_t i = 0; i < local.size(); ++i) score[local[i]] = probs[i];
    if (opt.skim->top_fraction) {
      const auto n_keep = static_cast<std::size_t>(std::ceil(*opt.skim->top_fraction * candidates.size()));
      std::stable_sort(candidates.begin(), candidates.end(),
                       [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
      for (std::size_t i = 0; i < n_keep && i < candidates.size(); ++i) keep[candidates[i]] = true;
    } else {
      for (std::size_t i : candidates) keep[i] = score[i] >= opt.skim->threshold;
    }
    std::vector<std::size_t> next_blocks, rows;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      if (!keep[i]) continue;
      next_blocks.push_back(blocks[i]);
      for (std::size_t t = 0; t < k; ++t) rows.push_back(i * k + t);
    }
    if (next_blocks.size() == blocks.size()) continue;
    std::vector<std::size_t> next_pos;
    std::vector<bool> next_mask;
    for (std::size_t row : rows) {
      next_pos.push_back(pos[row]);
      next_mask.push_back(mask[row]);
    }
    h = ops::gather_rows(h, rows);
    blocks = std::move(next_blocks);
    pos = std::move(next_pos);
    mask = std::move(next_mask);
  }
  r.logits = model.qa_head().forward(g, h);
  r.positions = pos;
  r.blocks = blocks;
  return r;
}

}  // namespace bskim
