#pragma once

// Differentiable tensor ops recorded on a Graph. Each op computes its output
// eagerly and registers a closure that accumulates input gradients.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "bskim/numerics/graph.hpp"

namespace bskim::ops {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// c[m,n] (+)= op(a) * op(b), with op(a) of shape [m,k] and op(b) of shape [k,n].
inline void gemm(const double* a, bool ta, const double* b, bool tb, double* c, std::size_t m,
                 std::size_t n, std::size_t k, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  ConstMap A(a, ta ? K : M, ta ? M : K);
  ConstMap B(b, tb ? N : K, tb ? K : N);
  MutMap C(c, M, N);
  auto run = [&](const auto& lhs, const auto& rhs) {
    if (accumulate)
      C.noalias() += lhs * rhs;
    else
      C.noalias() = lhs * rhs;
  };
  if (!ta && !tb)
    run(A, B);
  else if (!ta && tb)
    run(A, B.transpose());
  else if (ta && !tb)
    run(A.transpose(), B);
  else
    run(A.transpose(), B.transpose());
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

inline void add_into(Buffer& dst, const Buffer& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

inline std::size_t rows_of(const Shape& s) { return s.empty() ? 1 : s[0]; }

}  // namespace detail

// ---------------------------------------------------------------- linear algebra

inline Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require(A.ndim() == 2 && B.ndim() == 2 && A.dim(1) == B.dim(0),
                  "matmul: incompatible shapes " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor out({m, n});
  detail::gemm(A.data().data(), false, B.data().data(), false, out.data().data(), m, n, k, false);
  return a.graph().record("matmul", std::move(out), {a, b}, [a, b, m, n, k](Graph& g, std::size_t self) {
    const double* G = g.grad(self).data();
    if (g.requires_grad(a))
      detail::gemm(G, false, g.value(b).data().data(), true, g.grad(a).data(), m, k, n, true);
    if (g.requires_grad(b))
      detail::gemm(g.value(a).data().data(), true, G, false, g.grad(b).data(), k, n, m, true);
  });
}

// a[m,k] * b[n,k]^T -> [m,n]
inline Var matmul_nt(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require(A.ndim() == 2 && B.ndim() == 2 && A.dim(1) == B.dim(1),
                  "matmul_nt: incompatible shapes " + shape_str(A.shape()) + " x " +
                      shape_str(B.shape()) + "^T");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(0);
  Tensor out({m, n});
  detail::gemm(A.data().data(), false, B.data().data(), true, out.data().data(), m, n, k, false);
  return a.graph().record("matmul_nt", std::move(out), {a, b}, [a, b, m, n, k](Graph& g, std::size_t self) {
    const double* G = g.grad(self).data();
    if (g.requires_grad(a))
      detail::gemm(G, false, g.value(b).data().data(), false, g.grad(a).data(), m, k, n, true);
    if (g.requires_grad(b))
      detail::gemm(G, true, g.value(a).data().data(), false, g.grad(b).data(), n, k, m, true);
  });
}

// Batched product: a[B,m,k] * b[B,k,n] (or b[B,n,k]^T when trans_b).
inline Var bmm(Var a, Var b, bool trans_b = false) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  detail::require(A.ndim() == 3 && B.ndim() == 3 && A.dim(0) == B.dim(0),
                  "bmm: incompatible shapes " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  const std::size_t batch = A.dim(0), m = A.dim(1), k = A.dim(2);
  const std::size_t n = trans_b ? B.dim(1) : B.dim(2);
  detail::require((trans_b ? B.dim(2) : B.dim(1)) == k,
                  "bmm: inner extents differ " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor out({batch, m, n});
  for (std::size_t i = 0; i < batch; ++i)
    detail::gemm(A.data().data() + i * m * k, false, B.data().data() + i * k * n, trans_b,
                 out.data().data() + i * m * n, m, n, k, false);
  return a.graph().record("bmm", std::move(out), {a, b}, [a, b, batch, m, n, k, trans_b](Graph& g, std::size_t self) {
    const double* G = g.grad(self).data();
    const double* Av = g.value(a).data().data();
    const double* Bv = g.value(b).data().data();
    if (g.requires_grad(a)) {
      double* ga = g.grad(a).data();
      // dA = G * op(B)^T
      for (std::size_t i = 0; i < batch; ++i)
        detail::gemm(G + i * m * n, false, Bv + i * k * n, !trans_b, ga + i * m * k, m, k, n, true);
    }
    if (g.requires_grad(b)) {
      double* gb = g.grad(b).data();
      for (std::size_t i = 0; i < batch; ++i) {
        if (trans_b)  // dB[n,k] = G^T * A
          detail::gemm(G + i * m * n, true, Av + i * m * k, false, gb + i * k * n, n, k, m, true);
        else  // dB[k,n] = A^T * G
          detail::gemm(Av + i * m * k, true, G + i * m * n, false, gb + i * k * n, k, n, m, true);
      }
    }
  });
}

// ---------------------------------------------------------------- elementwise

inline Var add(Var a, Var b) {
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  out.drop_grad();
  const auto& bv = b.value().values();
  auto& o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return a.graph().record("add", std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    if (g.requires_grad(a)) detail::add_into(g.grad(a), G);
    if (g.requires_grad(b)) detail::add_into(g.grad(b), G);
  });
}

inline Var sub(Var a, Var b) {
  detail::require(a.shape() == b.shape(),
                  "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  out.drop_grad();
  const auto& bv = b.value().values();
  auto& o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.graph().record("sub", std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    if (g.requires_grad(a)) detail::add_into(g.grad(a), G);
    if (g.requires_grad(b)) {
      auto& gb = g.grad(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= G[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::require(a.shape() == b.shape(),
                  "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  out.drop_grad();
  const auto& bv = b.value().values();
  auto& o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.graph().record("mul", std::move(out), {a, b}, [a, b](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    if (g.requires_grad(a)) {
      auto& ga = g.grad(a);
      const auto& bv = g.value(b).values();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += G[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto& gb = g.grad(b);
      const auto& av = g.value(a).values();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += G[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  out.drop_grad();
  for (auto& v : out.values()) v *= s;
  return a.graph().record("scale", std::move(out), {a}, [a, s](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s * G[i];
  });
}

// x[..., n] + b[n], broadcast over leading axes.
inline Var add_rowvec(Var x, Var b) {
  const Tensor& X = x.value();
  const Tensor& B = b.value();
  detail::require(B.ndim() == 1 && X.ndim() >= 1 && X.shape().back() == B.dim(0),
                  "add_rowvec: bias " + shape_str(B.shape()) + " does not match " + shape_str(X.shape()));
  const std::size_t n = B.dim(0);
  Tensor out = X;
  out.drop_grad();
  auto& o = out.values();
  const auto& bv = B.values();
  for (std::size_t r = 0; r < o.size(); r += n)
    for (std::size_t j = 0; j < n; ++j) o[r + j] += bv[j];
  return x.graph().record("add_rowvec", std::move(out), {x, b}, [x, b, n](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    if (g.requires_grad(x)) detail::add_into(g.grad(x), G);
    if (g.requires_grad(b)) {
      auto& gb = g.grad(b);
      for (std::size_t r = 0; r < G.size(); r += n)
        for (std::size_t j = 0; j < n; ++j) gb[j] += G[r + j];
    }
  });
}

inline Var linear(Var x, Var weight, Var bias) { return add_rowvec(matmul(x, weight), bias); }

inline Var relu(Var a) {
  Tensor out = a.value();
  out.drop_grad();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  return a.graph().record("relu", std::move(out), {a}, [a](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    const auto& av = g.value(a).values();
    auto& ga = g.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i)
      if (av[i] > 0.0) ga[i] += G[i];
  });
}

namespace detail {

using ArrayMap = Eigen::Map<Eigen::ArrayXd>;
using ConstArrayMap = Eigen::Map<const Eigen::ArrayXd>;

inline ConstArrayMap arr(const Buffer& v) { return {v.data(), static_cast<Eigen::Index>(v.size())}; }
inline ArrayMap arr(Buffer& v) { return {v.data(), static_cast<Eigen::Index>(v.size())}; }

// tanh through the vectorized exp: 1 - 2 / (exp(2u) + 1).
template <typename E>
auto fast_tanh(const E& u) {
  return 1.0 - 2.0 / ((2.0 * u).exp() + 1.0);
}

}  // namespace detail

// tanh approximation of GELU
inline Var gelu(Var a) {
  static constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  const Tensor& A = a.value();
  Tensor out(A.shape());
  {
    auto x = detail::arr(A.values());
    detail::arr(out.values()) = 0.5 * x * (1.0 + detail::fast_tanh(c * (x + 0.044715 * x.cube())));
  }
  return a.graph().record("gelu", std::move(out), {a}, [a](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto x = detail::arr(g.value(a).values());
    const Eigen::ArrayXd t = detail::fast_tanh(c * (x + 0.044715 * x.cube()));
    const Eigen::ArrayXd du = c * (1.0 + 3.0 * 0.044715 * x.square());
    detail::arr(g.grad(a)) += detail::arr(G) * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
  });
}

// ---------------------------------------------------------------- reductions

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.graph().record("sum", Tensor::scalar(s), {a}, [a](Graph& g, std::size_t self) {
    const double G = g.grad(self)[0];
    for (auto& v : g.grad(a)) v += G;
  });
}

// Sum of w[i] * a[i] with constant weights.
inline Var weighted_sum(Var a, std::vector<double> w) {
  detail::require(w.size() == a.value().numel(), "weighted_sum: weight length mismatch");
  double s = 0.0;
  const auto& av = a.value().values();
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * av[i];
  return a.graph().record("weighted_sum", Tensor::scalar(s), {a},
                          [a, w = std::move(w)](Graph& g, std::size_t self) {
                            const double G = g.grad(self)[0];
                            auto& ga = g.grad(a);
                            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += G * w[i];
                          });
}

// ---------------------------------------------------------------- softmax family

// Softmax along `axis`, with max-subtraction.
inline Var softmax(Var x, std::size_t axis) {
  const Tensor& X = x.value();
  detail::require(axis < X.ndim(), "softmax: axis " + std::to_string(axis) + " invalid for " +
                                       shape_str(X.shape()));
  const Shape& s = X.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Tensor out(s);
  const auto& xv = X.values();
  auto& ov = out.values();
  if (inner == 1) {
    for (std::size_t o = 0; o < outer; ++o) {
      detail::ConstArrayMap xr(xv.data() + o * len, static_cast<Eigen::Index>(len));
      detail::ArrayMap orow(ov.data() + o * len, static_cast<Eigen::Index>(len));
      orow = (xr - xr.maxCoeff()).exp();
      orow *= 1.0 / orow.sum();
    }
  } else
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(xv[base + i * inner] - mx);
        ov[base + i * inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < len; ++i) ov[base + i * inner] /= z;
    }
  return x.graph().record("softmax", std::move(out), {x}, [x, outer, inner, len](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    const auto& y = g.value(self).values();
    auto& gx = g.grad(x);
    if (inner == 1) {
      for (std::size_t o = 0; o < outer; ++o) {
        const auto L = static_cast<Eigen::Index>(len);
        detail::ConstArrayMap gr(G.data() + o * len, L), yr(y.data() + o * len, L);
        detail::ArrayMap xr(gx.data() + o * len, L);
        const double dot = (gr * yr).sum();
        xr += yr * (gr - dot);
      }
      return;
    }
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t j = 0; j < inner; ++j) {
        const std::size_t base = o * len * inner + j;
        double dot = 0.0;
        for (std::size_t i = 0; i < len; ++i) dot += G[base + i * inner] * y[base + i * inner];
        for (std::size_t i = 0; i < len; ++i) {
          const std::size_t p = base + i * inner;
          gx[p] += y[p] * (G[p] - dot);
        }
      }
  });
}

inline Var softmax(Var x) { return softmax(x, x.value().ndim() - 1); }

// Per-row cross-entropy with fused log-softmax. logits[n, classes] -> [n].
// No mean is taken; reduce with sum() or weighted_sum().
inline Var cross_entropy(Var logits, const std::vector<std::size_t>& targets) {
  const Tensor& L = logits.value();
  detail::require(L.ndim() == 2, "cross_entropy: logits must be 2-D, got " + shape_str(L.shape()));
  const std::size_t n = L.dim(0), c = L.dim(1);
  detail::require(c >= 2, "cross_entropy: need at least 2 classes");
  detail::require(targets.size() == n, "cross_entropy: target count mismatch");
  for (std::size_t t : targets)
    if (t >= c) throw IndexError("cross_entropy: target " + std::to_string(t) + " out of range [0," +
                                 std::to_string(c) + ")");
  Tensor out({n});
  auto probs = std::make_shared<Buffer>(n * c);
  const auto& lv = L.values();
  for (std::size_t r = 0; r < n; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv[r * c + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(lv[r * c + j] - mx);
      (*probs)[r * c + j] = e;
      z += e;
    }
    for (std::size_t j = 0; j < c; ++j) (*probs)[r * c + j] /= z;
    out[r] = std::log(z) + mx - lv[r * c + targets[r]];
  }
  return logits.graph().record("cross_entropy", std::move(out), {logits},
                               [logits, targets, probs, c](Graph& g, std::size_t self) {
                                 const auto& G = g.grad(self);
                                 auto& gl = g.grad(logits);
                                 for (std::size_t r = 0; r < targets.size(); ++r)
                                   for (std::size_t j = 0; j < c; ++j) {
                                     const double p = (*probs)[r * c + j] - (j == targets[r] ? 1.0 : 0.0);
                                     gl[r * c + j] += G[r] * p;
                                   }
                               });
}

// ---------------------------------------------------------------- normalization

// Layer normalization over the last axis.
inline Var layernorm(Var x, Var gamma, Var beta, double eps = 1e-12) {
  const Tensor& X = x.value();
  const std::size_t n = X.shape().back();
  detail::require(gamma.value().numel() == n && beta.value().numel() == n,
                  "layernorm: affine parameters do not match " + shape_str(X.shape()));
  const std::size_t rows = X.numel() / n;
  Tensor out(X.shape());
  auto xhat = std::make_shared<Buffer>(X.numel());
  auto inv_std = std::make_shared<Buffer>(rows);
  const auto& xv = X.values();
  const auto& gm = gamma.value().values();
  const auto& bt = beta.value().values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * is;
      (*xhat)[r * n + j] = h;
      out[r * n + j] = h * gm[j] + bt[j];
    }
  }
  return x.graph().record(
      "layernorm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, n, rows, xhat, inv_std](Graph& g, std::size_t self) {
        const auto& G = g.grad(self);
        const auto& gm = g.value(gamma).values();
        if (g.requires_grad(gamma)) {
          auto& gg = g.grad(gamma);
          for (std::size_t i = 0; i < G.size(); ++i) gg[i % n] += G[i] * (*xhat)[i];
        }
        if (g.requires_grad(beta)) {
          auto& gb = g.grad(beta);
          for (std::size_t i = 0; i < G.size(); ++i) gb[i % n] += G[i];
        }
        if (g.requires_grad(x)) {
          auto& gx = g.grad(x);
          for (std::size_t r = 0; r < rows; ++r) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = G[r * n + j] * gm[j];
              m1 += gh;
              m2 += gh * (*xhat)[r * n + j];
            }
            m1 /= static_cast<double>(n);
            m2 /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double gh = G[r * n + j] * gm[j];
              gx[r * n + j] += (*inv_std)[r] * (gh - m1 - (*xhat)[r * n + j] * m2);
            }
          }
        }
      });
}

// Running statistics owned by the model; updated in place in training mode.
struct BatchNormStats {
  Tensor* running_mean = nullptr;
  Tensor* running_var = nullptr;
  double momentum = 0.1;
  double eps = 1e-5;
};

// Batch normalization of x[B,C,H,W] with per-channel statistics over the
// batch and spatial axes. Running variance uses the population estimate, so
// eval and train outputs agree once the running statistics have converged.
inline Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats stats, bool training) {
  const Tensor& X = x.value();
  detail::require(X.ndim() == 4, "batchnorm: expected [B,C,H,W], got " + shape_str(X.shape()));
  const std::size_t B = X.dim(0), C = X.dim(1), S = X.dim(2) * X.dim(3);
  detail::require(gamma.value().numel() == C && beta.value().numel() == C,
                  "batchnorm: affine parameters do not match channel count");
  detail::require(stats.running_mean && stats.running_var && stats.running_mean->numel() == C &&
                      stats.running_var->numel() == C,
                  "batchnorm: running statistics missing or mis-sized");
  const double count = static_cast<double>(B * S);
  Buffer mean(C, 0.0), var(C, 0.0);
  const auto& xv = X.values();
  if (training) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < S; ++s) mean[c] += xv[(b * C + c) * S + s];
    for (auto& m : mean) m /= count;
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t s = 0; s < S; ++s) {
          const double d = xv[(b * C + c) * S + s] - mean[c];
          var[c] += d * d;
        }
    for (auto& v : var) v /= count;
    auto& rm = stats.running_mean->values();
    auto& rv = stats.running_var->values();
    for (std::size_t c = 0; c < C; ++c) {
      rm[c] = (1.0 - stats.momentum) * rm[c] + stats.momentum * mean[c];
      rv[c] = (1.0 - stats.momentum) * rv[c] + stats.momentum * var[c];
    }
  } else {
    mean = stats.running_mean->values();
    var = stats.running_var->values();
  }
  auto inv_std = std::make_shared<Buffer>(C);
  for (std::size_t c = 0; c < C; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var[c] + stats.eps);
  auto xhat = std::make_shared<Buffer>(X.numel());
  Tensor out(X.shape());
  const auto& gm = gamma.value().values();
  const auto& bt = beta.value().values();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t p = (b * C + c) * S + s;
        const double h = (xv[p] - mean[c]) * (*inv_std)[c];
        (*xhat)[p] = h;
        out[p] = h * gm[c] + bt[c];
      }
  return x.graph().record(
      "batchnorm", std::move(out), {x, gamma, beta},
      [x, gamma, beta, B, C, S, count, xhat, inv_std, training](Graph& g, std::size_t self) {
        const auto& G = g.grad(self);
        const auto& gm = g.value(gamma).values();
        Buffer sum_g(C, 0.0), sum_gh(C, 0.0);
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t p = (b * C + c) * S + s;
              sum_g[c] += G[p];
              sum_gh[c] += G[p] * (*xhat)[p];
            }
        if (g.requires_grad(gamma)) {
          auto& gg = g.grad(gamma);
          for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gh[c];
        }
        if (g.requires_grad(beta)) {
          auto& gb = g.grad(beta);
          for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
        }
        if (g.requires_grad(x)) {
          auto& gx = g.grad(x);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t s = 0; s < S; ++s) {
                const std::size_t p = (b * C + c) * S + s;
                const double k = gm[c] * (*inv_std)[c];
                if (training)
                  gx[p] += k * (G[p] - sum_g[c] / count - (*xhat)[p] * sum_gh[c] / count);
                else
                  gx[p] += k * G[p];
              }
        }
      });
}

// ---------------------------------------------------------------- indexing and layout

// Rows of table[V,d] selected by ids -> [n,d].
inline Var embedding(Var table, const std::vector<std::size_t>& ids) {
  const Tensor& T = table.value();
  detail::require(T.ndim() == 2, "embedding: table must be 2-D");
  const std::size_t vocab = T.dim(0), d = T.dim(1);
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= vocab)
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " >= table size " + std::to_string(vocab));
    std::copy_n(T.values().begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.values().begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return table.graph().record("embedding", std::move(out), {table}, [table, ids, d](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& gt = g.grad(table);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < d; ++j) gt[ids[i] * d + j] += G[i * d + j];
  });
}

inline Var reshape(Var x, Shape shape) {
  Tensor out = x.value();
  out.drop_grad();
  out.reshape(std::move(shape));
  return x.graph().record("reshape", std::move(out), {x}, [x](Graph& g, std::size_t self) {
    detail::add_into(g.grad(x), g.grad(self));
  });
}

inline Var transpose(Var x) {
  const Tensor& X = x.value();
  detail::require(X.ndim() == 2, "transpose: expected 2-D, got " + shape_str(X.shape()));
  const std::size_t m = X.dim(0), n = X.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = X.at(i, j);
  return x.graph().record("transpose", std::move(out), {x}, [x, m, n](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += G[j * m + i];
  });
}

// [a,b,c] -> [b,a,c]; splits/merges attention heads.
inline Var swap_leading(Var x) {
  const Tensor& X = x.value();
  detail::require(X.ndim() == 3, "swap_leading: expected 3-D, got " + shape_str(X.shape()));
  const std::size_t A = X.dim(0), B = X.dim(1), C = X.dim(2);
  Tensor out({B, A, C});
  for (std::size_t i = 0; i < A; ++i)
    for (std::size_t j = 0; j < B; ++j)
      std::copy_n(X.values().begin() + static_cast<std::ptrdiff_t>((i * B + j) * C), C,
                  out.values().begin() + static_cast<std::ptrdiff_t>((j * A + i) * C));
  return x.graph().record("swap_leading", std::move(out), {x}, [x, A, B, C](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < A; ++i)
      for (std::size_t j = 0; j < B; ++j)
        for (std::size_t k = 0; k < C; ++k) gx[(i * B + j) * C + k] += G[(j * A + i) * C + k];
  });
}

// Rows [start, start+count) along axis 0.
inline Var slice_rows(Var x, std::size_t start, std::size_t count) {
  const Tensor& X = x.value();
  const std::size_t rows = detail::rows_of(X.shape());
  if (start + count > rows)
    throw IndexError("slice_rows: [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") exceeds " + std::to_string(rows) + " rows");
  const std::size_t w = X.numel() / rows;
  Shape s = X.shape();
  s[0] = count;
  Tensor out(s);
  std::copy_n(X.values().begin() + static_cast<std::ptrdiff_t>(start * w), count * w, out.values().begin());
  return x.graph().record("slice_rows", std::move(out), {x}, [x, start, w](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < G.size(); ++i) gx[start * w + i] += G[i];
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  detail::require(!parts.empty(), "concat_rows: nothing to concatenate");
  Shape s = parts[0].shape();
  detail::require(!s.empty(), "concat_rows: scalars cannot be concatenated");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    Shape ps = p.shape();
    detail::require(ps.size() == s.size() && std::equal(ps.begin() + 1, ps.end(), s.begin() + 1),
                    "concat_rows: trailing shape mismatch " + shape_str(ps) + " vs " + shape_str(s));
    rows += ps[0];
  }
  s[0] = rows;
  Tensor out(s);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().values().begin(), p.value().values().end(),
              out.values().begin() + static_cast<std::ptrdiff_t>(off));
    off += p.value().numel();
  }
  return parts[0].graph().record("concat_rows", std::move(out), parts, [parts](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t n = g.value(p).numel();
      if (g.requires_grad(p)) {
        auto& gp = g.grad(p);
        for (std::size_t i = 0; i < n; ++i) gp[i] += G[off + i];
      }
      off += n;
    }
  });
}

// Selected rows along axis 0, in the given order.
inline Var gather_rows(Var x, const std::vector<std::size_t>& rows) {
  const Tensor& X = x.value();
  const std::size_t total = detail::rows_of(X.shape());
  const std::size_t w = X.numel() / std::max<std::size_t>(total, 1);
  Shape s = X.shape();
  s[0] = rows.size();
  Tensor out(s);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= total) throw IndexError("gather_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(X.values().begin() + static_cast<std::ptrdiff_t>(rows[i] * w), w,
                out.values().begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  return x.graph().record("gather_rows", std::move(out), {x}, [x, rows, w](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < w; ++j) gx[rows[i] * w + j] += G[i * w + j];
  });
}

// Inverse of gather_rows: places row i of x at position rows[i] of a
// `total`-row tensor; every other row is `fill`.
inline Var scatter_rows(Var x, const std::vector<std::size_t>& rows, std::size_t total, double fill) {
  const Tensor& X = x.value();
  detail::require(detail::rows_of(X.shape()) == rows.size(), "scatter_rows: index count mismatch");
  const std::size_t w = rows.empty() ? 1 : X.numel() / rows.size();
  Shape s = X.shape();
  s[0] = total;
  Tensor out(s, fill);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= total) throw IndexError("scatter_rows: row " + std::to_string(rows[i]) + " out of range");
    std::copy_n(X.values().begin() + static_cast<std::ptrdiff_t>(i * w), w,
                out.values().begin() + static_cast<std::ptrdiff_t>(rows[i] * w));
  }
  return x.graph().record("scatter_rows", std::move(out), {x}, [x, rows, w](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t j = 0; j < w; ++j) gx[i * w + j] += G[rows[i] * w + j];
  });
}

// Adds `value` to every score whose key (last-axis) position is masked.
inline Var mask_keys(Var scores, const std::vector<bool>& masked, double value = -1e9) {
  Tensor out = scores.value();
  out.drop_grad();
  const std::size_t n = out.shape().back();
  detail::require(masked.size() == n, "mask_keys: mask length mismatch");
  auto& o = out.values();
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < n; ++j)
    if (masked[j]) cols.push_back(j);
  for (std::size_t r = 0; r < o.size(); r += n)
    for (std::size_t j : cols) o[r + j] += value;
  return scores.graph().record("mask_keys", std::move(out), {scores}, [scores](Graph& g, std::size_t self) {
    detail::add_into(g.grad(scores), g.grad(self));
  });
}

// Diagonal k x k squares of attn[H,n,n] for the listed blocks -> [B,H,k,k].
inline Var diagonal_blocks(Var attn, std::size_t k, const std::vector<std::size_t>& blocks) {
  const Tensor& A = attn.value();
  detail::require(A.ndim() == 3 && A.dim(1) == A.dim(2), "diagonal_blocks: expected [H,n,n], got " +
                                                             shape_str(A.shape()));
  const std::size_t H = A.dim(0), n = A.dim(1);
  detail::require(k >= 1 && n % k == 0, "diagonal_blocks: length " + std::to_string(n) +
                                            " is not a multiple of block size " + std::to_string(k));
  for (std::size_t b : blocks)
    if ((b + 1) * k > n) throw IndexError("diagonal_blocks: block " + std::to_string(b) + " out of range");
  Tensor out({blocks.size(), H, k, k});
  auto& o = out.values();
  const auto& av = A.values();
  for (std::size_t bi = 0; bi < blocks.size(); ++bi)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t r = 0; r < k; ++r) {
        const std::size_t src = (h * n + blocks[bi] * k + r) * n + blocks[bi] * k;
        std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(src), k,
                    o.begin() + static_cast<std::ptrdiff_t>(((bi * H + h) * k + r) * k));
      }
  return attn.graph().record("diagonal_blocks", std::move(out), {attn},
                             [attn, k, blocks, H, n](Graph& g, std::size_t self) {
                               const auto& G = g.grad(self);
                               auto& ga = g.grad(attn);
                               for (std::size_t bi = 0; bi < blocks.size(); ++bi)
                                 for (std::size_t h = 0; h < H; ++h)
                                   for (std::size_t r = 0; r < k; ++r) {
                                     const std::size_t dst = (h * n + blocks[bi] * k + r) * n + blocks[bi] * k;
                                     const std::size_t src = ((bi * H + h) * k + r) * k;
                                     for (std::size_t c = 0; c < k; ++c) ga[dst + c] += G[src + c];
                                   }
                             });
}

// ---------------------------------------------------------------- convolution and pooling

// Zero-padded cross-correlation. x[B,C,H,W] (or [C,H,W]), weight[O,C,kh,kw], bias[O].
inline Var conv2d(Var x, Var weight, Var bias, std::size_t padding) {
  const Tensor& X = x.value();
  const Tensor& Wt = weight.value();
  const bool batched = X.ndim() == 4;
  detail::require(X.ndim() == 3 || X.ndim() == 4, "conv2d: expected [C,H,W] or [B,C,H,W], got " +
                                                      shape_str(X.shape()));
  detail::require(Wt.ndim() == 4, "conv2d: weight must be [O,C,kh,kw]");
  const std::size_t B = batched ? X.dim(0) : 1;
  const std::size_t C = X.dim(batched ? 1 : 0), H = X.dim(batched ? 2 : 1), W = X.dim(batched ? 3 : 2);
  const std::size_t O = Wt.dim(0), kh = Wt.dim(2), kw = Wt.dim(3);
  detail::require(Wt.dim(1) == C, "conv2d: weight expects " + std::to_string(Wt.dim(1)) +
                                      " input channels, input has " + std::to_string(C));
  detail::require(bias.value().numel() == O, "conv2d: bias length mismatch");
  if (kh > H + 2 * padding || kw > W + 2 * padding)
    throw DimensionError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         " larger than padded input " + std::to_string(H + 2 * padding) + "x" +
                         std::to_string(W + 2 * padding));
  const std::size_t Ho = H + 2 * padding - kh + 1, Wo = W + 2 * padding - kw + 1;
  const std::size_t P = Ho * Wo, Kc = C * kh * kw;
  // im2col buffer per image: [Kc, P]
  auto cols = std::make_shared<Buffer>(B * Kc * P, 0.0);
  const auto& xv = X.values();
  for (std::size_t b = 0; b < B; ++b) {
    double* col = cols->data() + b * Kc * P;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < kh; ++i)
        for (std::size_t j = 0; j < kw; ++j) {
          double* row = col + ((c * kh + i) * kw + j) * P;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + i) - static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + j) - static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              row[oy * Wo + ox] = xv[((b * C + c) * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
            }
          }
        }
  }
  Shape os = batched ? Shape{B, O, Ho, Wo} : Shape{O, Ho, Wo};
  Tensor out(os);
  const auto& bv = bias.value().values();
  for (std::size_t b = 0; b < B; ++b) {
    double* dst = out.values().data() + b * O * P;
    for (std::size_t o = 0; o < O; ++o) std::fill_n(dst + o * P, P, bv[o]);
    detail::gemm(Wt.values().data(), false, cols->data() + b * Kc * P, false, dst, O, P, Kc, true);
  }
  return x.graph().record(
      "conv2d", std::move(out), {x, weight, bias},
      [x, weight, bias, cols, B, C, H, W, O, kh, kw, Ho, Wo, P, Kc, padding](Graph& g, std::size_t self) {
        const auto& G = g.grad(self);
        if (g.requires_grad(weight)) {
          auto& gw = g.grad(weight);
          for (std::size_t b = 0; b < B; ++b)
            detail::gemm(G.data() + b * O * P, false, cols->data() + b * Kc * P, true, gw.data(), O, Kc, P, true);
        }
        if (g.requires_grad(bias)) {
          auto& gb = g.grad(bias);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < O; ++o)
              for (std::size_t p = 0; p < P; ++p) gb[o] += G[(b * O + o) * P + p];
        }
        if (g.requires_grad(x)) {
          auto& gx = g.grad(x);
          Buffer dcol(Kc * P);
          const auto& wv = g.value(weight).values();
          for (std::size_t b = 0; b < B; ++b) {
            detail::gemm(wv.data(), true, G.data() + b * O * P, false, dcol.data(), Kc, P, O, false);
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < kh; ++i)
                for (std::size_t j = 0; j < kw; ++j) {
                  const double* row = dcol.data() + ((c * kh + i) * kw + j) * P;
                  for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + i) - static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                      const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + j) - static_cast<std::ptrdiff_t>(padding);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                      gx[((b * C + c) * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)] +=
                          row[oy * Wo + ox];
                    }
                  }
                }
          }
        }
      });
}

// 2x2 average pooling with stride 2 over the last two axes; an odd trailing
// row or column is dropped.
inline Var avg_pool_2x2(Var x) {
  const Tensor& X = x.value();
  detail::require(X.ndim() >= 2, "avg_pool_2x2: need at least 2 axes");
  const std::size_t H = X.shape()[X.ndim() - 2], W = X.shape().back();
  detail::require(H >= 2 && W >= 2, "avg_pool_2x2: spatial extent " + std::to_string(H) + "x" +
                                        std::to_string(W) + " below 2x2");
  const std::size_t planes = X.numel() / (H * W), Ho = H / 2, Wo = W / 2;
  Shape s = X.shape();
  s[s.size() - 2] = Ho;
  s.back() = Wo;
  Tensor out(s);
  const auto& xv = X.values();
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        const double* base = xv.data() + p * H * W;
        out[(p * Ho + i) * Wo + j] = 0.25 * (base[2 * i * W + 2 * j] + base[2 * i * W + 2 * j + 1] +
                                             base[(2 * i + 1) * W + 2 * j] + base[(2 * i + 1) * W + 2 * j + 1]);
      }
  return x.graph().record("avg_pool_2x2", std::move(out), {x}, [x, planes, H, W, Ho, Wo](Graph& g, std::size_t self) {
    const auto& G = g.grad(self);
    auto& gx = g.grad(x);
    for (std::size_t p = 0; p < planes; ++p)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          const double v = 0.25 * G[(p * Ho + i) * Wo + j];
          double* base = gx.data() + p * H * W;
          base[2 * i * W + 2 * j] += v;
          base[2 * i * W + 2 * j + 1] += v;
          base[(2 * i + 1) * W + 2 * j] += v;
          base[(2 * i + 1) * W + 2 * j + 1] += v;
        }
  });
}

}  // namespace bskim::ops
