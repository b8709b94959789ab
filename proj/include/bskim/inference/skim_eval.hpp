#pragma once

#include <vector>

#include "json.hpp"

#include "bskim/inference/skim_forward.hpp"
#include "bskim/training/metrics.hpp"

namespace bskim {

struct SkimEvalResult {
  EvalResult quality;
  double vanilla_flops = 0.0;
  double skimmed_flops = 0.0;
  std::vector<double> mean_layer_length;  // tokens per layer, averaged over examples
  std::size_t all_passage_skimmed = 0;

  double flops_ratio() const { return skimmed_flops > 0.0 ? vanilla_flops / skimmed_flops : 1.0; }

  // Retention schedule of the summed per-layer lengths.
  std::vector<double> retentions() const {
    std::vector<double> r;
    for (std::size_t l = 0; l < mean_layer_length.size(); ++l) {
      const double prev = l == 0 ? mean_layer_length[0] : mean_layer_length[l - 1];
      r.push_back(prev > 0.0 ? mean_layer_length[l] / prev : 1.0);
    }
    return r;
  }
};

inline SkimEvalResult skim_evaluate(const BlockSkimModel& model, const std::vector<QAExample>& data,
                                    const SkimPolicy& policy, std::size_t threads = 1) {
  const std::size_t k = model.predictor_config().block_size, L = model.num_layers();
  policy.validate(L);
  std::vector<SkimOutput> outs(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const BatchItem item = make_item(data[i], round_up(data[i].tokens.size(), k), k, false);
    SkimOutput o = skim_forward(model, item, policy);
    o.logits = Tensor();
    outs[i] = std::move(o);
  });
  SkimEvalResult r;
  SpanScorer s;
  r.mean_layer_length.assign(L, 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SkimOutput& o = outs[i];
    s.add(o.prediction, data[i].answer);
    r.vanilla_flops += o.flops.vanilla_total;
    r.skimmed_flops += o.flops.skimmed_total;
    for (std::size_t l = 0; l < L; ++l) r.mean_layer_length[l] += static_cast<double>(o.state.layer_lengths[l]);
    r.all_passage_skimmed += o.all_passage_skimmed;
  }
  if (!data.empty())
    for (auto& v : r.mean_layer_length) v /= static_cast<double>(data.size());
  r.quality = s.result();
  return r;
}

inline nlohmann::ordered_json to_json(const SkimEvalResult& r) {
  nlohmann::ordered_json j;
  j["em"] = r.quality.em;
  j["f1"] = r.quality.f1;
  j["count"] = r.quality.count;
  j["vanilla_flops"] = r.vanilla_flops;
  j["skimmed_flops"] = r.skimmed_flops;
  j["flops_ratio"] = r.flops_ratio();
  j["mean_layer_length"] = r.mean_layer_length;
  j["all_passage_skimmed"] = r.all_passage_skimmed;
  return j;
}

}  // namespace bskim
