#pragma once

#include <cmath>
#include <unordered_map>
#include <vector>

#include "bskim/numerics/tensor.hpp"

namespace bskim {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with bias correction. Moment buffers are keyed by tensor address, so
// the optimizer must not outlive the tensors it updates.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update to every tensor in `params` that has a gradient.
  // Tensors not requiring grad are skipped.
  template <typename Range>
  void step(Range&& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (Tensor* p : params) {
      if (!p->requires_grad() || !p->has_grad()) continue;
      auto& st = state_[p];
      if (st.m.size() != p->numel()) {
        st.m.assign(p->numel(), 0.0);
        st.v.assign(p->numel(), 0.0);
      }
      const auto& g = p->grad_view();
      auto& w = p->values();
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + cfg_.weight_decay * w[i];
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
        const double mh = st.m[i] / c1;
        const double vh = st.v[i] / c2;
        w[i] -= lr * mh / (std::sqrt(vh) + cfg_.eps);
      }
    }
  }

  long steps() const noexcept { return t_; }

 private:
  struct Moments {
    Buffer m, v;
  };
  AdamConfig cfg_;
  long t_ = 0;
  std::unordered_map<const Tensor*, Moments> state_;
};

}  // namespace bskim
