#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "bskim/numerics/adam.hpp"
#include "bskim/skim/loss.hpp"
#include "bskim/training/config.hpp"
#include "bskim/training/metrics.hpp"

namespace bskim {

struct StepLog {
  std::size_t step = 0;
  double total = 0.0;
  double qa = 0.0;
  std::vector<double> skim;  // beta * positive + negative, per layer
};

struct EpochLog {
  std::size_t epoch = 0;
  std::string phase;
  double mean_total = 0.0;
  std::optional<EvalResult> dev;
  std::vector<BinaryMetrics> predictors;
};

struct TrainReport {
  TrainMode mode = TrainMode::joint;
  double alpha = 0.0;
  double beta = 1.0;
  std::size_t num_layers = 0;
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;

  std::string steps_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "step,total,qa";
    for (std::size_t l = 0; l < num_layers; ++l) os << ",skim_" << l;
    os << '\n';
    for (const auto& s : steps) {
      os << s.step << ',' << s.total << ',' << s.qa;
      for (std::size_t l = 0; l < num_layers; ++l) os << ',' << (l < s.skim.size() ? s.skim[l] : 0.0);
      os << '\n';
    }
    return os.str();
  }

  nlohmann::ordered_json summary() const {
    nlohmann::ordered_json j;
    j["mode"] = to_string(mode);
    j["alpha"] = alpha;
    j["beta"] = beta;
    j["steps"] = steps.size();
    j["epochs"] = nlohmann::ordered_json::array();
    for (const auto& e : epochs) {
      nlohmann::ordered_json je;
      je["epoch"] = e.epoch;
      je["phase"] = e.phase;
      je["mean_total"] = e.mean_total;
      if (e.dev) je["dev"] = {{"em", e.dev->em}, {"f1", e.dev->f1}, {"count", e.dev->count}};
      je["predictors"] = nlohmann::ordered_json::array();
      for (const auto& m : e.predictors)
        je["predictors"].push_back({{"accuracy", m.accuracy()}, {"precision", m.precision()},
                                    {"recall", m.recall()}, {"f1", m.f1()}, {"blocks", m.count()}});
      j["epochs"].push_back(je);
    }
    return j;
  }
};

struct TrainHooks {
  const std::vector<QAExample>* dev = nullptr;  // evaluated after every epoch
  std::function<void(std::size_t epoch, const BlockSkimModel&)> on_epoch;
  std::size_t eval_threads = 1;
};

inline double auto_beta(const std::vector<QAExample>& data, std::size_t k, bool evidence_labels) {
  std::vector<BlockLabels> labels;
  labels.reserve(data.size());
  for (const auto& ex : data) labels.push_back(make_item(ex, round_up(ex.tokens.size(), k), k, evidence_labels).labels);
  return compute_beta(labels);
}

namespace detail {

struct PhaseSpec {
  std::string name;
  std::size_t epochs = 0;
  double alpha = 0.0;
  bool qa_objective = true;
  bool run_predictors = false;
  const SkimPolicy* skim = nullptr;
};

inline void run_phase(BlockSkimModel& model, const std::vector<QAExample>& data, const TrainConfig& cfg,
                      const PhaseSpec& ph, double beta, std::mt19937_64& rng, TrainReport& rep,
                      const TrainHooks& hooks) {
  const std::size_t L = model.num_layers(), k = cfg.block_size;
  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = per_epoch * ph.epochs;
  Adam opt(AdamConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < ph.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    for (std::size_t b0 = 0; b0 < data.size(); b0 += cfg.batch_size) {
      const std::size_t b1 = std::min(data.size(), b0 + cfg.batch_size);
      std::vector<const QAExample*> ptrs;
      for (std::size_t i = b0; i < b1; ++i) ptrs.push_back(&data[order[i]]);
      const auto batch = make_batch(ptrs, k, cfg.evidence_labels);
      auto params = model.trainable_parameters();
      for (Tensor* t : params) t->zero_grad();
      const double inv = 1.0 / static_cast<double>(batch.size());
      StepLog log;
      log.step = rep.steps.size();
      log.skim.assign(L, 0.0);
      for (const auto& item : batch) {
        Graph g;
        PassOptions po;
        po.run_predictors = ph.run_predictors;
        po.bn_training = true;
        po.skim = ph.skim;
        Var loss;
        double qa_v = 0.0;
        try {
          PassResult r = run_pass(model, g, item, po);
          Var lqa;
          if (ph.qa_objective) {
            Var logits = r.logits;
            if (r.positions.size() != item.token_ids.size())
              logits = ops::scatter_rows(logits, r.positions, item.token_ids.size(), cfg.skimmed_logit);
            lqa = model.qa_head().loss(g, logits, item.pad_mask, item.start, item.end);
            qa_v = lqa.value()[0];
          } else {
            lqa = g.constant(Tensor::scalar(0.0));
          }
          std::vector<SkimLoss> skims;
          if (ph.alpha > 0.0)
            for (std::size_t l = 0; l < L; ++l) {
              if (!r.block_logits[l].valid()) {
                skims.push_back({g.constant(Tensor::scalar(0.0)), g.constant(Tensor::scalar(0.0))});
                continue;
              }
              skims.push_back(blockskim_loss(g, r.block_logits[l], r.scored[l], item.labels));
              log.skim[l] += inv * (beta * skims.back().positive.value()[0] + skims.back().negative.value()[0]);
            }
          loss = ops::scale(total_loss(lqa, skims, ph.alpha, beta), inv);
          if (!std::isfinite(loss.value()[0])) throw NumericError("non-finite loss");
          g.backward(loss);
        } catch (const NumericError& e) {
          throw DivergenceError(std::string("training diverged at step ") + std::to_string(rep.steps.size()) + ": " + e.what(), static_cast<long>(rep.steps.size()));
        }
        log.total += loss.value()[0];
        log.qa += inv * qa_v;
      }
      opt.step(params, lr_schedule(step, total_steps, cfg.lr));
      ++step;
      epoch_sum += log.total;
      rep.steps.push_back(std::move(log));
    }
    EpochLog el;
    el.epoch = rep.epochs.size();
    el.phase = ph.name;
    el.mean_total = epoch_sum / static_cast<double>(per_epoch);
    if (hooks.dev) {
      el.dev = evaluate(model, *hooks.dev, hooks.eval_threads);
      el.predictors = evaluate_predictors(model, *hooks.dev, cfg.evidence_labels, hooks.eval_threads);
    }
    rep.epochs.push_back(std::move(el));
    if (hooks.on_epoch) hooks.on_epoch(rep.epochs.size() - 1, model);
  }
}

}  // namespace detail

// Trains in place. Gradients are averaged over the examples of a batch; one
// Adam step per batch under a linearly decaying learning rate.
inline TrainReport train(BlockSkimModel& model, const std::vector<QAExample>& data, const TrainConfig& cfg,
                         const TrainHooks& hooks = {}) {
  cfg.validate();
  if (data.empty()) throw DataError("train: empty dataset");
  if (cfg.block_size != model.predictor_config().block_size)
    throw ConfigError("train: block_size " + std::to_string(cfg.block_size) + " differs from the model's " +
                      std::to_string(model.predictor_config().block_size));
  TrainReport rep;
  rep.mode = cfg.mode;
  rep.num_layers = model.num_layers();
  rep.alpha = cfg.mode == TrainMode::vanilla ? 0.0 : cfg.alpha;
  rep.beta = cfg.beta ? *cfg.beta : auto_beta(data, cfg.block_size, cfg.evidence_labels);
  std::mt19937_64 rng(cfg.seed);

  using detail::PhaseSpec;
  switch (cfg.mode) {
    case TrainMode::joint:
      detail::run_phase(model, data, cfg, PhaseSpec{"joint", cfg.epochs, cfg.alpha, true, true, nullptr}, rep.beta,
                        rng, rep, hooks);
      break;
    case TrainMode::vanilla:
      detail::run_phase(model, data, cfg, PhaseSpec{"vanilla", cfg.epochs, 0.0, true, false, nullptr}, rep.beta, rng,
                        rep, hooks);
      break;
    case TrainMode::freeze_transformer: {
      detail::run_phase(model, data, cfg, PhaseSpec{"qa", cfg.epochs, 0.0, true, false, nullptr}, rep.beta, rng, rep,
                        hooks);
      model.set_backbone_trainable(false);
      try {
        const double a = cfg.alpha > 0.0 ? cfg.alpha : 1.0;
        detail::run_phase(model, data, cfg,
                          PhaseSpec{"predictors", cfg.freeze_epochs ? cfg.freeze_epochs : cfg.epochs, a, false, true,
                                    nullptr},
                          rep.beta, rng, rep, hooks);
      } catch (...) {
        model.set_backbone_trainable(true);
        throw;
      }
      model.set_backbone_trainable(true);
      break;
    }
    case TrainMode::skim_training:
      detail::run_phase(model, data, cfg,
                        PhaseSpec{"skim-train", cfg.epochs, cfg.alpha, true, true, &cfg.train_skim_policy}, rep.beta,
                        rng, rep, hooks);
      break;
  }
  return rep;
}

// Candidate with the best score; ties go to the smaller alpha.
inline double grid_search_alpha(std::vector<double> candidates, const std::function<double(double)>& eval_fn) {
  if (candidates.empty()) throw ConfigError("grid_search_alpha: no candidates");
  std::sort(candidates.begin(), candidates.end());
  double best = candidates.front(), best_score = eval_fn(best);
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double s = eval_fn(candidates[i]);
    if (s > best_score) {
      best_score = s;
      best = candidates[i];
    }
  }
  return best;
}

inline std::vector<double> default_alpha_grid() { return {1e-3, 1e-2, 1e-1, 1.0, 10.0}; }

}  // namespace bskim
