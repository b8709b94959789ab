#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "bskim/model/config.hpp"
#include "bskim/model/encoder.hpp"
#include "bskim/skim/predictor.hpp"

namespace bskim {

// Encoder, span head and one skim predictor per layer, sharing one
// parameter store. Not copyable: the components hold pointers into the store.
class BlockSkimModel {
 public:
  BlockSkimModel(const ModelConfig& mc, const PredictorConfig& pc, std::uint64_t seed)
      : model_cfg_(mc), pred_cfg_(pc) {
    mc.validate();
    pc.validate();
    std::mt19937_64 rng(seed);
    encoder_ = std::make_unique<Encoder>(mc, store_, rng);
    qa_ = std::make_unique<QAHead>(mc.hidden_dim, store_, rng);
    for (std::size_t l = 0; l < mc.num_layers; ++l)
      predictors_.emplace_back("skim.layer" + std::to_string(l) + ".", mc.num_heads, pc, store_, rng);
  }

  BlockSkimModel(const BlockSkimModel&) = delete;
  BlockSkimModel& operator=(const BlockSkimModel&) = delete;

  const ModelConfig& model_config() const noexcept { return model_cfg_; }
  const PredictorConfig& predictor_config() const noexcept { return pred_cfg_; }
  const Encoder& encoder() const { return *encoder_; }
  const QAHead& qa_head() const { return *qa_; }
  QAHead& qa_head() { return *qa_; }
  const SkimPredictor& predictor(std::size_t layer) const { return predictors_.at(layer); }
  std::size_t num_layers() const noexcept { return model_cfg_.num_layers; }

  ParameterStore& store() noexcept { return store_; }
  const ParameterStore& store() const noexcept { return store_; }

  // Encoder and QA head parameters.
  std::vector<Tensor*> backbone_parameters() const {
    auto p = encoder_->parameters();
    for (Tensor* t : qa_->parameters()) p.push_back(t);
    return p;
  }

  std::vector<Tensor*> predictor_parameters() const {
    std::vector<Tensor*> p;
    for (const auto& pr : predictors_)
      for (Tensor* t : pr.parameters()) p.push_back(t);
    return p;
  }

  std::vector<Tensor*> trainable_parameters() {
    std::vector<Tensor*> p;
    for (auto& e : store_.entries())
      if (e.tensor.requires_grad()) p.push_back(&e.tensor);
    return p;
  }

  void set_backbone_trainable(bool on) {
    for (Tensor* t : backbone_parameters()) t->set_requires_grad(on);
  }

 private:
  ModelConfig model_cfg_;
  PredictorConfig pred_cfg_;
  ParameterStore store_;
  std::unique_ptr<Encoder> encoder_;
  std::unique_ptr<QAHead> qa_;
  std::vector<SkimPredictor> predictors_;
};

}  // namespace bskim
