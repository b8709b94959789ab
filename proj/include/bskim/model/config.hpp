#pragma once

#include <cstddef>
#include <string>

#include "bskim/errors.hpp"

namespace bskim {

struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t num_heads = 4;
  std::size_t hidden_dim = 64;
  std::size_t ffn_dim = 128;
  std::size_t vocab_size = 512;
  std::size_t max_seq_len = 128;
  std::size_t type_vocab_size = 2;
  double dropout_rate = 0.0;

  std::size_t head_dim() const { return hidden_dim / num_heads; }

  void validate() const {
    if (num_heads == 0 || hidden_dim == 0) throw ConfigError("model: hidden_dim and num_heads must be positive");
    if (hidden_dim % num_heads != 0)
      throw ConfigError("model: hidden_dim " + std::to_string(hidden_dim) + " not divisible by num_heads " +
                        std::to_string(num_heads));
    if (vocab_size < 4) throw ConfigError("model: vocab_size must cover the 4 special tokens");
    if (max_seq_len == 0 || ffn_dim == 0) throw ConfigError("model: max_seq_len and ffn_dim must be positive");
    if (dropout_rate != 0.0) throw ConfigError("model: dropout is not supported (must be 0)");
  }
};

// Shape of the per-layer CNN relevance predictor.
struct PredictorConfig {
  std::size_t block_size = 16;
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 8;
  std::size_t conv3_channels = 4;

  void validate() const {
    if (block_size == 0) throw ConfigError("predictor: block_size must be >= 1");
    if (conv1_channels == 0 || conv2_channels == 0 || conv3_channels == 0)
      throw ConfigError("predictor: channel widths must be positive");
  }
};

}  // namespace bskim
