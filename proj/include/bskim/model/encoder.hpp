#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "bskim/model/config.hpp"
#include "bskim/numerics/ops.hpp"
#include "bskim/numerics/parameters.hpp"

namespace bskim {

namespace init {

inline Tensor xavier(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return Tensor::uniform({fan_in, fan_out}, bound, rng);
}

// Sinusoidal table of amplitude `amp` used as the starting point of the
// learned position embeddings.
inline Tensor sinusoidal(std::size_t positions, std::size_t d, double amp) {
  Tensor t({positions, d});
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t i = 0; i < d; ++i) {
      const double f = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      t.at(p, i) = amp * (i % 2 == 0 ? std::sin(static_cast<double>(p) * f) : std::cos(static_cast<double>(p) * f));
    }
  return t;
}

}  // namespace init

// Per-layer post-softmax attention maps together with the original token
// positions each map covers.
struct AttentionTrace {
  std::vector<Tensor> layers;                          // [H, n_l, n_l]
  std::vector<std::vector<std::size_t>> positions;     // original index of each row
};

struct AttentionOutput {
  Var hidden;     // [n, d]
  Var attention;  // [H, n, n]
};

// BERT-style encoder: token + position + segment embeddings, embedding
// layernorm, then post-norm blocks of self-attention and a GELU feed-forward.
class Encoder {
 public:
  struct Layer {
    Tensor *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    Tensor *ln1_g, *ln1_b;
    Tensor *w1, *b1, *w2, *b2;
    Tensor *ln2_g, *ln2_b;
  };

  Encoder(const ModelConfig& cfg, ParameterStore& store, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    const std::size_t d = cfg.hidden_dim;
    tok_emb_ = &store.add("encoder.embed.token", Tensor::randn({cfg.vocab_size, d}, 0.02, rng));
    pos_emb_ = &store.add("encoder.embed.position", init::sinusoidal(cfg.max_seq_len, d, 0.1));
    seg_emb_ = &store.add("encoder.embed.segment", Tensor::randn({cfg.type_vocab_size, d}, 0.02, rng));
    emb_ln_g_ = &store.add("encoder.embed.ln.gamma", Tensor({d}, 1.0));
    emb_ln_b_ = &store.add("encoder.embed.ln.beta", Tensor({d}, 0.0));
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
      const std::string p = "encoder.layer" + std::to_string(l) + ".";
      Layer L{};
      L.wq = &store.add(p + "attn.wq", init::xavier(d, d, rng));
      L.bq = &store.add(p + "attn.bq", Tensor({d}));
      L.wk = &store.add(p + "attn.wk", init::xavier(d, d, rng));
      L.bk = &store.add(p + "attn.bk", Tensor({d}));
      L.wv = &store.add(p + "attn.wv", init::xavier(d, d, rng));
      L.bv = &store.add(p + "attn.bv", Tensor({d}));
      L.wo = &store.add(p + "attn.wo", init::xavier(d, d, rng));
      L.bo = &store.add(p + "attn.bo", Tensor({d}));
      L.ln1_g = &store.add(p + "ln1.gamma", Tensor({d}, 1.0));
      L.ln1_b = &store.add(p + "ln1.beta", Tensor({d}));
      L.w1 = &store.add(p + "ffn.w1", init::xavier(d, cfg.ffn_dim, rng));
      L.b1 = &store.add(p + "ffn.b1", Tensor({cfg.ffn_dim}));
      L.w2 = &store.add(p + "ffn.w2", init::xavier(cfg.ffn_dim, d, rng));
      L.b2 = &store.add(p + "ffn.b2", Tensor({d}));
      L.ln2_g = &store.add(p + "ln2.gamma", Tensor({d}, 1.0));
      L.ln2_b = &store.add(p + "ln2.beta", Tensor({d}));
      layers_.push_back(L);
    }
  }

  const ModelConfig& config() const noexcept { return cfg_; }

  // Embedded input after the embedding layernorm. Positions are absolute
  // indices into the position table.
  Var embed(Graph& g, const std::vector<std::size_t>& ids, const std::vector<std::size_t>& segments,
            const std::vector<std::size_t>& positions) const {
    if (ids.size() > cfg_.max_seq_len)
      throw IndexError("encoder: sequence length " + std::to_string(ids.size()) + " exceeds max_seq_len " +
                       std::to_string(cfg_.max_seq_len));
    if (segments.size() != ids.size() || positions.size() != ids.size())
      throw DimensionError("encoder: ids, segments and positions must have equal length");
    Var x = ops::embedding(g.bind(*tok_emb_), ids);
    x = ops::add(x, ops::embedding(g.bind(*pos_emb_), positions));
    x = ops::add(x, ops::embedding(g.bind(*seg_emb_), segments));
    return ops::layernorm(x, g.bind(*emb_ln_g_), g.bind(*emb_ln_b_));
  }

  // Self-attention sublayer output (before residual) and the attention weights.
  AttentionOutput multi_head_attention(Graph& g, std::size_t layer, Var hidden,
                                       const std::vector<bool>& pad_mask) const {
    const Layer& L = layers_.at(layer);
    const std::size_t n = hidden.shape()[0], H = cfg_.num_heads, dk = cfg_.head_dim();
    auto heads = [&](Tensor* w, Tensor* b) {
      Var p = ops::linear(hidden, g.bind(*w), g.bind(*b));
      return ops::swap_leading(ops::reshape(p, {n, H, dk}));
    };
    Var q = heads(L.wq, L.bq);
    Var k = heads(L.wk, L.bk);
    Var v = heads(L.wv, L.bv);
    Var scores = ops::scale(ops::bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(dk)));
    scores = ops::mask_keys(scores, pad_mask);
    Var attn = ops::softmax(scores);
    Var ctx = ops::reshape(ops::swap_leading(ops::bmm(attn, v)), {n, H * dk});
    Var out = ops::linear(ctx, g.bind(*L.wo), g.bind(*L.bo));
    return {out, attn};
  }

  // One full encoder block.
  AttentionOutput layer(Graph& g, std::size_t layer, Var hidden, const std::vector<bool>& pad_mask) const {
    const Layer& L = layers_.at(layer);
    auto [att_out, attn] = multi_head_attention(g, layer, hidden, pad_mask);
    Var h = ops::layernorm(ops::add(hidden, att_out), g.bind(*L.ln1_g), g.bind(*L.ln1_b));
    Var f = ops::gelu(ops::linear(h, g.bind(*L.w1), g.bind(*L.b1)));
    f = ops::linear(f, g.bind(*L.w2), g.bind(*L.b2));
    Var out = ops::layernorm(ops::add(h, f), g.bind(*L.ln2_g), g.bind(*L.ln2_b));
    return {out, attn};
  }

  struct ForwardResult {
    Var hidden;
    std::vector<Var> attention;  // empty unless captured
  };

  ForwardResult forward(Graph& g, const std::vector<std::size_t>& ids, const std::vector<std::size_t>& segments,
                        const std::vector<bool>& pad_mask, bool capture) const {
    std::vector<std::size_t> pos(ids.size());
    for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
    ForwardResult r;
    r.hidden = embed(g, ids, segments, pos);
    for (std::size_t l = 0; l < cfg_.num_layers; ++l) {
      auto out = layer(g, l, r.hidden, pad_mask);
      r.hidden = out.hidden;
      if (capture) r.attention.push_back(out.attention);
    }
    return r;
  }

  const Layer& layer_params(std::size_t l) const { return layers_.at(l); }

  std::vector<Tensor*> parameters() const {
    std::vector<Tensor*> ps{tok_emb_, pos_emb_, seg_emb_, emb_ln_g_, emb_ln_b_};
    for (const auto& L : layers_)
      for (Tensor* t : {L.wq, L.bq, L.wk, L.bk, L.wv, L.bv, L.wo, L.bo, L.ln1_g, L.ln1_b, L.w1, L.b1, L.w2, L.b2,
                        L.ln2_g, L.ln2_b})
        ps.push_back(t);
    return ps;
  }

 private:
  ModelConfig cfg_;
  Tensor *tok_emb_, *pos_emb_, *seg_emb_, *emb_ln_g_, *emb_ln_b_;
  std::vector<Layer> layers_;
};

// Linear span head d -> 2; column 0 holds start logits, column 1 end logits.
class QAHead {
 public:
  QAHead(std::size_t hidden_dim, ParameterStore& store, std::mt19937_64& rng) {
    w_ = &store.add("qa.weight", init::xavier(hidden_dim, 2, rng));
    b_ = &store.add("qa.bias", Tensor({2}));
  }

  // [n, 2] logits
  Var forward(Graph& g, Var hidden) const { return ops::linear(hidden, g.bind(*w_), g.bind(*b_)); }

  // Mean of start and end cross-entropies; pad positions are masked out.
  Var loss(Graph& g, Var logits, const std::vector<bool>& pad_mask, std::size_t start, std::size_t end) const {
    (void)g;
    Var rows = ops::mask_keys(ops::transpose(logits), pad_mask);  // [2, n]
    return ops::scale(ops::sum(ops::cross_entropy(rows, {start, end})), 0.5);
  }

  std::vector<Tensor*> parameters() const { return {w_, b_}; }
  Tensor& weight() { return *w_; }
  Tensor& bias() { return *b_; }

 private:
  Tensor *w_, *b_;
};

}  // namespace bskim
