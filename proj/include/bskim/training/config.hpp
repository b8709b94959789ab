#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "bskim/errors.hpp"
#include "bskim/inference/policy.hpp"

namespace bskim {

enum class TrainMode { joint, vanilla, freeze_transformer, skim_training };

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::joint: return "joint";
    case TrainMode::vanilla: return "vanilla";
    case TrainMode::freeze_transformer: return "freeze";
    case TrainMode::skim_training: return "skim-train";
  }
  return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
  if (s == "joint") return TrainMode::joint;
  if (s == "vanilla") return TrainMode::vanilla;
  if (s == "freeze" || s == "freeze_transformer") return TrainMode::freeze_transformer;
  if (s == "skim-train" || s == "skim_training") return TrainMode::skim_training;
  throw ConfigError("unknown training mode '" + s + "' (joint|vanilla|freeze|skim-train)");
}

struct TrainConfig {
  double lr = 3e-4;
  std::size_t batch_size = 16;
  std::size_t epochs = 2;
  double alpha = 0.1;
  std::optional<double> beta;  // unset: derived from the training labels
  std::size_t block_size = 16;
  std::uint64_t seed = 42;
  TrainMode mode = TrainMode::joint;
  bool evidence_labels = false;
  double weight_decay = 0.0;
  // Predictor-only epochs after the QA phase in freeze mode (0: same as epochs).
  std::size_t freeze_epochs = 0;
  // Policy applied during skim-train; skimmed positions get this start/end logit.
  SkimPolicy train_skim_policy{};
  double skimmed_logit = -1e4;

  void validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
    if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
    if (block_size == 0) throw ConfigError("block_size must be >= 1");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (beta && !(*beta > 0.0)) throw ConfigError("beta must be > 0");
    if (mode == TrainMode::joint && !(alpha > 0.0)) throw ConfigError("joint mode requires alpha > 0");
    if (mode == TrainMode::vanilla && alpha != 0.0) throw ConfigError("vanilla mode requires alpha = 0");
  }
};

// Linear decay from base_lr at step 0 to 0 at total_steps.
inline double lr_schedule(std::size_t step, std::size_t total_steps, double base_lr) {
  if (step > total_steps)
    throw DomainError("lr_schedule: step " + std::to_string(step) + " exceeds total " + std::to_string(total_steps));
  if (total_steps == 0) return base_lr;
  return base_lr * (1.0 - static_cast<double>(step) / static_cast<double>(total_steps));
}

}  // namespace bskim
