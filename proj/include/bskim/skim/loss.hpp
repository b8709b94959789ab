#pragma once

#include <cmath>
#include <vector>

#include "bskim/numerics/ops.hpp"
#include "bskim/skim/blocks.hpp"

namespace bskim {

// Per-layer skim loss split by class; the balance factor is applied later,
// exactly once, in total_loss.
struct SkimLoss {
  Var positive;  // sum of CE over loss-masked blocks with y = 1
  Var negative;  // sum of CE over loss-masked blocks with y = 0
};

// `logits` is [B, 2] for the blocks listed in `blocks` (in that order).
// Blocks with loss_mask false contribute nothing; with no masked blocks both
// terms are constant zeros.
inline SkimLoss blockskim_loss(Graph& g, Var logits, const std::vector<std::size_t>& blocks,
                               const BlockLabels& labels) {
  std::vector<std::size_t> targets;
  std::vector<double> wpos, wneg;
  bool any = false;
  for (std::size_t b : blocks) {
    if (b >= labels.y.size()) throw IndexError("blockskim_loss: block index out of range");
    const bool use = labels.loss_mask[b];
    const int y = labels.y[b];
    targets.push_back(static_cast<std::size_t>(y));
    wpos.push_back(use && y == 1 ? 1.0 : 0.0);
    wneg.push_back(use && y == 0 ? 1.0 : 0.0);
    any = any || use;
  }
  if (!any || blocks.empty()) return {g.constant(Tensor::scalar(0.0)), g.constant(Tensor::scalar(0.0))};
  Var ce = ops::cross_entropy(logits, targets);
  return {ops::weighted_sum(ce, std::move(wpos)), ops::weighted_sum(ce, std::move(wneg))};
}

// L_QA + alpha * sum over layers of (beta * positive + negative). alpha = 0
// returns the QA loss node itself.
inline Var total_loss(Var l_qa, const std::vector<SkimLoss>& per_layer, double alpha, double beta) {
  if (alpha < 0.0) throw ConfigError("total_loss: alpha must be >= 0");
  if (alpha == 0.0 || per_layer.empty()) return l_qa;
  std::vector<Var> terms;
  for (const auto& s : per_layer) terms.push_back(ops::add(ops::scale(s.positive, beta), s.negative));
  Var acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ops::add(acc, terms[i]);
  return ops::add(l_qa, ops::scale(acc, alpha));
}

// Plain-number form of the same objective.
inline double total_loss_value(double l_qa, const std::vector<std::pair<double, double>>& per_layer, double alpha,
                               double beta) {
  double s = 0.0;
  for (const auto& [pos, neg] : per_layer) s += beta * pos + neg;
  return l_qa + alpha * s;
}

// Balance factor: masked negatives / masked positives over the training
// labels, rounded to the nearest integer with a floor of 1.
inline double compute_beta(const std::vector<BlockLabels>& labels) {
  if (labels.empty()) throw DataError("compute_beta: empty dataset");
  std::size_t pos = 0, neg = 0;
  for (const auto& l : labels) {
    pos += l.positives();
    neg += l.negatives();
  }
  if (pos == 0) throw DataError("compute_beta: no positive blocks in the training set");
  const double r = std::round(static_cast<double>(neg) / static_cast<double>(pos));
  return std::max(1.0, r);
}

}  // namespace bskim
