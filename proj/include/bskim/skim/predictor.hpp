#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "bskim/model/config.hpp"
#include "bskim/numerics/ops.hpp"
#include "bskim/numerics/parameters.hpp"

namespace bskim {

// CNN block-relevance classifier attached to one encoder layer. Input is the
// stack of diagonal attention squares [B, H, k, k]; output is [B, 2] logits
// (class 1 = block holds answer tokens).
//
//   conv3x3 -> BN -> relu -> pool2x2 -> conv3x3 -> BN -> relu -> pool2x2
//   -> conv1x1 -> relu -> flatten -> linear
//
// A pooling stage is skipped when its input extent is below 2.
class SkimPredictor {
 public:
  SkimPredictor(const std::string& prefix, std::size_t heads, const PredictorConfig& cfg, ParameterStore& store,
                std::mt19937_64& rng)
      : cfg_(cfg), heads_(heads) {
    cfg.validate();
    const std::size_t c1 = cfg.conv1_channels, c2 = cfg.conv2_channels, c3 = cfg.conv3_channels;
    auto kaiming = [&](Shape s) {
      const double fan_in = static_cast<double>(s[1] * s[2] * s[3]);
      return Tensor::randn(std::move(s), std::sqrt(2.0 / fan_in), rng);
    };
    conv1_w_ = &store.add(prefix + "conv1.weight", kaiming({c1, heads, 3, 3}));
    conv1_b_ = &store.add(prefix + "conv1.bias", Tensor({c1}));
    bn1_g_ = &store.add(prefix + "bn1.gamma", Tensor({c1}, 1.0));
    bn1_b_ = &store.add(prefix + "bn1.beta", Tensor({c1}));
    bn1_mean_ = &store.add(prefix + "bn1.running_mean", Tensor({c1}), false);
    bn1_var_ = &store.add(prefix + "bn1.running_var", Tensor({c1}, 1.0), false);
    conv2_w_ = &store.add(prefix + "conv2.weight", kaiming({c2, c1, 3, 3}));
    conv2_b_ = &store.add(prefix + "conv2.bias", Tensor({c2}));
    bn2_g_ = &store.add(prefix + "bn2.gamma", Tensor({c2}, 1.0));
    bn2_b_ = &store.add(prefix + "bn2.beta", Tensor({c2}));
    bn2_mean_ = &store.add(prefix + "bn2.running_mean", Tensor({c2}), false);
    bn2_var_ = &store.add(prefix + "bn2.running_var", Tensor({c2}, 1.0), false);
    conv3_w_ = &store.add(prefix + "conv3.weight", kaiming({c3, c2, 1, 1}));
    conv3_b_ = &store.add(prefix + "conv3.bias", Tensor({c3}));
    const std::size_t s = final_extent(cfg.block_size);
    const std::size_t feat = c3 * s * s;
    const double bound = std::sqrt(6.0 / static_cast<double>(feat + 2));
    fc_w_ = &store.add(prefix + "fc.weight", Tensor::uniform({feat, 2}, bound, rng));
    fc_b_ = &store.add(prefix + "fc.bias", Tensor({2}));
  }

  // Spatial extent after both (possibly skipped) pooling stages.
  static std::size_t final_extent(std::size_t k) {
    std::size_t s = k;
    for (int i = 0; i < 2; ++i)
      if (s >= 2) s /= 2;
    return s;
  }

  const PredictorConfig& config() const noexcept { return cfg_; }
  std::size_t heads() const noexcept { return heads_; }

  Var forward(Graph& g, Var slices, bool training) const {
    const Shape& in = slices.shape();
    if (in.size() != 4 || in[1] != heads_ || in[2] != cfg_.block_size || in[3] != cfg_.block_size)
      throw DimensionError("predictor: expected [B," + std::to_string(heads_) + "," +
                           std::to_string(cfg_.block_size) + "," + std::to_string(cfg_.block_size) + "], got " +
                           shape_str(in));
    const std::size_t B = in[0];
    auto pool = [](Var x) { return x.shape()[2] >= 2 && x.shape()[3] >= 2 ? ops::avg_pool_2x2(x) : x; };
    Var x = ops::conv2d(slices, g.bind(*conv1_w_), g.bind(*conv1_b_), 1);
    x = ops::batchnorm(x, g.bind(*bn1_g_), g.bind(*bn1_b_), {bn1_mean_, bn1_var_}, training);
    x = pool(ops::relu(x));
    x = ops::conv2d(x, g.bind(*conv2_w_), g.bind(*conv2_b_), 1);
    x = ops::batchnorm(x, g.bind(*bn2_g_), g.bind(*bn2_b_), {bn2_mean_, bn2_var_}, training);
    x = pool(ops::relu(x));
    x = ops::relu(ops::conv2d(x, g.bind(*conv3_w_), g.bind(*conv3_b_), 0));
    x = ops::reshape(x, {B, x.value().numel() / std::max<std::size_t>(B, 1)});
    return ops::linear(x, g.bind(*fc_w_), g.bind(*fc_b_));
  }

  std::vector<Tensor*> parameters() const {
    return {conv1_w_, conv1_b_, bn1_g_, bn1_b_, conv2_w_, conv2_b_, bn2_g_, bn2_b_,
            conv3_w_, conv3_b_, fc_w_, fc_b_};
  }

  std::vector<Tensor*> all_tensors() const {
    auto p = parameters();
    for (Tensor* t : {bn1_mean_, bn1_var_, bn2_mean_, bn2_var_}) p.push_back(t);
    return p;
  }

 private:
  PredictorConfig cfg_;
  std::size_t heads_;
  Tensor *conv1_w_, *conv1_b_, *bn1_g_, *bn1_b_, *bn1_mean_, *bn1_var_;
  Tensor *conv2_w_, *conv2_b_, *bn2_g_, *bn2_b_, *bn2_mean_, *bn2_var_;
  Tensor *conv3_w_, *conv3_b_, *fc_w_, *fc_b_;
};

}  // namespace bskim
