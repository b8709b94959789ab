#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bskim/analysis/block_attention.hpp"
#include "bskim/analysis/trace.hpp"
#include "bskim/training/metrics.hpp"

namespace bskim {

inline constexpr std::size_t kProbeFeaturesPerHead = 6;

struct ProbeData {
  std::vector<std::vector<double>> x;  // one row per passage block
  std::vector<int> y;
};

// Per passage block and head: attention from the block to itself, to the
// question tokens, to [CLS], to the [SEP]s, to the rest of the passage, and
// from the question tokens to the block. Blocks are clipped at the padding.
inline ProbeData probe_features(const TraceRecord& rec, std::size_t layer, std::size_t heads, const QAExample& ex,
                                std::size_t k, bool evidence_labels = false) {
  const std::size_t n = rec.lengths.at(layer);
  if (n < ex.tokens.size()) throw DataError("probe_features: trace shorter than example");
  const BlockSpec spec = partition_blocks(n, k, ex.question.last, ex.pad_start());
  const BlockLabels labels = block_labels(spec, ex.answer, evidence_labels ? ex.evidence : std::vector<Span>{});
  const Span question{ex.question.first + 1, ex.question.last - 1};
  const Span cls{0, 0}, sep1{ex.question.last, ex.question.last}, passage = ex.passage;
  const bool has_final_sep = passage.last + 1 < ex.tokens.size();
  const Span sep2{passage.last + 1, passage.last + 1};
  ProbeData d;
  for (std::size_t b = 0; b < spec.num_blocks(); ++b) {
    if (spec.kinds[b] != BlockKind::passage) continue;
    const Span blk{spec.begin(b), std::min(spec.end(b), ex.pad_start()) - 1};
    std::vector<double> f;
    f.reserve(kProbeFeaturesPerHead * heads);
    for (std::size_t h = 0; h < heads; ++h) {
      auto A = [&](std::size_t i, std::size_t j) { return rec.at(layer, h, i, j); };
      const double self = block_attention(A, n, blk, blk);
      const double to_q = question.first <= question.last ? block_attention(A, n, blk, question) : 0.0;
      const double to_cls = block_attention(A, n, blk, cls);
      double to_sep = block_attention(A, n, blk, sep1);
      if (has_final_sep) to_sep += block_attention(A, n, blk, sep2);
      const Span own{std::max(blk.first, passage.first), std::min(blk.last, passage.last)};
      double rest = block_attention(A, n, blk, passage);
      if (own.first <= own.last) rest -= block_attention(A, n, blk, own);
      const double from_q = question.first <= question.last ? block_attention(A, n, question, blk) : 0.0;
      for (double v : {self, to_q, to_cls, to_sep, rest, from_q}) f.push_back(v);
    }
    d.x.push_back(std::move(f));
    d.y.push_back(labels.y[b]);
  }
  return d;
}

inline ProbeData probe_features(const TraceFile& traces, std::size_t layer, const std::vector<QAExample>& examples,
                                std::size_t k, bool evidence_labels = false) {
  if (traces.records.size() != examples.size())
    throw DataError("probe_features: " + std::to_string(traces.records.size()) + " traces for " +
                    std::to_string(examples.size()) + " examples");
  ProbeData all;
  for (std::size_t e = 0; e < examples.size(); ++e) {
    auto d = probe_features(traces.records[e], layer, traces.num_heads, examples[e], k, evidence_labels);
    all.x.insert(all.x.end(), d.x.begin(), d.x.end());
    all.y.insert(all.y.end(), d.y.begin(), d.y.end());
  }
  return all;
}

struct ProbeFitOptions {
  double l2 = 1e-3;
  std::size_t max_iter = 10000;
  double tol = 1e-6;  // gradient-norm stopping threshold
};

// Logistic regression on z-scored features, fitted by full-batch gradient
// descent with step 1/Lipschitz.
class LogisticProbe {
 public:
  void fit(const ProbeData& d, const ProbeFitOptions& opt = {}) {
    const std::size_t n = d.x.size();
    if (n == 0) throw DataError("probe_fit: no samples");
    if (d.y.size() != n) throw DimensionError("probe_fit: label count differs from sample count");
    const std::size_t pos = static_cast<std::size_t>(std::count(d.y.begin(), d.y.end(), 1));
    if (pos == 0 || pos == n) throw DataError("probe_fit: need both classes, got a single class");
    const std::size_t m = d.x[0].size();
    Eigen::MatrixXd X(n, m);
    for (std::size_t i = 0; i < n; ++i) {
      if (d.x[i].size() != m) throw DimensionError("probe_fit: ragged feature rows");
      for (std::size_t j = 0; j < m; ++j) X(i, j) = d.x[i][j];
    }
    mean_ = X.colwise().mean();
    scale_.resize(m);
    for (std::size_t j = 0; j < m; ++j) {
      const double var = (X.col(j).array() - mean_(j)).square().mean();
      scale_(j) = var > 1e-300 ? 1.0 / std::sqrt(var) : 1.0;
    }
    Eigen::MatrixXd Z(n, m + 1);
    Z.leftCols(m) = ((X.rowwise() - mean_.transpose()).array().rowwise() * scale_.transpose().array()).matrix();
    Z.col(m).setOnes();
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) y(i) = d.y[i];
    const double lip = 0.25 * Z.squaredNorm() / static_cast<double>(n) + opt.l2;
    const double step = 1.0 / lip;
    w_ = Eigen::VectorXd::Zero(m + 1);
    iterations_ = 0;
    for (; iterations_ < opt.max_iter; ++iterations_) {
      Eigen::VectorXd p = (Z * w_).unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
      Eigen::VectorXd g = Z.transpose() * (p - y) / static_cast<double>(n);
      g.head(m) += opt.l2 * w_.head(m);
      grad_norm_ = g.norm();
      if (grad_norm_ < opt.tol) break;
      w_ -= step * g;
    }
  }

  double probability(const std::vector<double>& x) const {
    const std::size_t m = static_cast<std::size_t>(mean_.size());
    if (x.size() != m) throw DimensionError("probe: feature length mismatch");
    double t = w_(static_cast<Eigen::Index>(m));
    for (std::size_t j = 0; j < m; ++j) t += w_(static_cast<Eigen::Index>(j)) * (x[j] - mean_(j)) * scale_(j);
    return 1.0 / (1.0 + std::exp(-t));
  }
  int predict(const std::vector<double>& x) const { return probability(x) >= 0.5 ? 1 : 0; }

  BinaryMetrics score(const ProbeData& d) const {
    BinaryMetrics b;
    for (std::size_t i = 0; i < d.x.size(); ++i) b.add(predict(d.x[i]) == 1, d.y[i] == 1);
    return b;
  }

  std::size_t iterations() const noexcept { return iterations_; }
  double grad_norm() const noexcept { return grad_norm_; }

 private:
  Eigen::VectorXd mean_, scale_, w_;
  std::size_t iterations_ = 0;
  double grad_norm_ = 0.0;
};

struct ProbeResult {
  BinaryMetrics train;
  BinaryMetrics heldout;
  std::size_t iterations = 0;
  double grad_norm = 0.0;
};

// Seeded shuffle, then the last `heldout_fraction` of samples are held out.
inline ProbeResult probe_fit(const ProbeData& d, const ProbeFitOptions& opt = {}, double heldout_fraction = 0.3,
                             std::uint64_t seed = 42) {
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) throw ConfigError("probe_fit: bad held-out fraction");
  std::vector<std::size_t> idx(d.x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_hold = static_cast<std::size_t>(heldout_fraction * static_cast<double>(idx.size()));
  ProbeData tr, ho;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    ProbeData& dst = i < idx.size() - n_hold ? tr : ho;
    dst.x.push_back(d.x[idx[i]]);
    dst.y.push_back(d.y[idx[i]]);
  }
  LogisticProbe p;
  p.fit(tr, opt);
  ProbeResult r;
  r.train = p.score(tr);
  r.heldout = p.score(ho);
  r.iterations = p.iterations();
  r.grad_norm = p.grad_norm();
  return r;
}

inline std::string probe_csv(const std::vector<ProbeResult>& per_layer) {
  std::ostringstream os;
  os.precision(10);
  os << "layer,train_accuracy,train_f1,heldout_accuracy,heldout_f1,iterations\n";
  for (std::size_t l = 0; l < per_layer.size(); ++l) {
    const auto& r = per_layer[l];
    os << l << ',' << r.train.accuracy() << ',' << r.train.f1() << ',' << r.heldout.accuracy() << ','
       << r.heldout.f1() << ',' << r.iterations << '\n';
  }
  return os.str();
}

}  // namespace bskim
