#pragma once

#include <algorithm>
#include <vector>

#include "bskim/data/batch.hpp"
#include "bskim/inference/decode.hpp"
#include "bskim/inference/pass.hpp"
#include "bskim/model/model.hpp"
#include "bskim/parallel.hpp"

namespace bskim {

// Token-overlap F1 of two inclusive position spans.
inline double span_f1(Span pred, Span gold) {
  const std::size_t lo = std::max(pred.first, gold.first), hi = std::min(pred.last, gold.last);
  if (lo > hi) return 0.0;
  const double overlap = static_cast<double>(hi - lo + 1);
  const double p = overlap / static_cast<double>(pred.length()), r = overlap / static_cast<double>(gold.length());
  return 2.0 * p * r / (p + r);
}

struct EvalResult {
  double em = 0.0;  // percent
  double f1 = 0.0;  // percent
  std::size_t count = 0;
};

// Accumulates EM/F1 over (prediction, gold) pairs; a missing prediction scores 0.
class SpanScorer {
 public:
  void add(const std::optional<Span>& pred, Span gold) {
    ++n_;
    if (!pred) return;
    em_ += (*pred == gold) ? 1.0 : 0.0;
    f1_ += span_f1(*pred, gold);
  }
  EvalResult result() const {
    EvalResult r;
    r.count = n_;
    if (n_ > 0) {
      r.em = 100.0 * em_ / static_cast<double>(n_);
      r.f1 = 100.0 * f1_ / static_cast<double>(n_);
    }
    return r;
  }

 private:
  double em_ = 0.0, f1_ = 0.0;
  std::size_t n_ = 0;
};

// Full-length forward and span decode for one example.
inline std::optional<Span> predict_span(const BlockSkimModel& model, const QAExample& ex) {
  const std::size_t k = model.predictor_config().block_size;
  BatchItem item = make_item(ex, round_up(ex.tokens.size(), k), k, false);
  Graph g;
  g.set_grad_enabled(false);
  auto fr = model.encoder().forward(g, item.token_ids, item.segments, item.pad_mask, false);
  Var logits = model.qa_head().forward(g, fr.hidden);
  return decode_span(logits.value(), ex.passage);
}

inline EvalResult evaluate(const BlockSkimModel& model, const std::vector<QAExample>& data, std::size_t threads = 1) {
  std::vector<std::optional<Span>> preds(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { preds[i] = predict_span(model, data[i]); });
  SpanScorer s;
  for (std::size_t i = 0; i < data.size(); ++i) s.add(preds[i], data[i].answer);
  return s.result();
}

struct BinaryMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  void add(bool predicted, bool actual) {
    if (predicted && actual) ++tp;
    else if (predicted) ++fp;
    else if (actual) ++fn;
    else ++tn;
  }
  std::size_t count() const { return tp + fp + tn + fn; }
  double accuracy() const { return count() ? static_cast<double>(tp + tn) / static_cast<double>(count()) : 0.0; }
  double precision() const { return tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0; }
  double recall() const { return tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
  }
};

// Relevance-classifier quality per layer over all passage blocks of `data`
// (no skimming; predictors in inference mode; P >= 0.5 counts as positive).
inline std::vector<BinaryMetrics> evaluate_predictors(const BlockSkimModel& model, const std::vector<QAExample>& data,
                                                      bool evidence_labels = false, std::size_t threads = 1) {
  const std::size_t L = model.num_layers(), k = model.predictor_config().block_size;
  std::vector<std::vector<BinaryMetrics>> per(data.size(), std::vector<BinaryMetrics>(L));
  parallel_for(data.size(), threads, [&](std::size_t i) {
    BatchItem item = make_item(data[i], round_up(data[i].tokens.size(), k), k, evidence_labels);
    Graph g;
    g.set_grad_enabled(false);
    PassOptions opt;
    opt.run_predictors = true;
    auto r = run_pass(model, g, item, opt);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t b = 0; b < r.scored[l].size(); ++b)
        per[i][l].add(r.block_probs[l][b] >= 0.5, item.labels.y[r.scored[l][b]] == 1);
  });
  std::vector<BinaryMetrics> out(L);
  for (const auto& v : per)
    for (std::size_t l = 0; l < L; ++l) {
      out[l].tp += v[l].tp;
      out[l].fp += v[l].fp;
      out[l].tn += v[l].tn;
      out[l].fn += v[l].fn;
    }
  return out;
}

}  // namespace bskim
