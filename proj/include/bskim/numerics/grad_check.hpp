#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bskim/numerics/graph.hpp"

namespace bskim {

// A scalar-valued function of one tensor, expressed on a fresh graph.
using ScalarFn = std::function<Var(Graph&, Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

// Relative error between analytic and numeric derivatives, floored so that
// entries whose true derivative is ~0 are judged on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Compares the reverse-mode gradient of f at x against central differences.
inline GradCheckResult grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5, double floor = 1e-6) {
  Buffer analytic;
  {
    Graph g;
    Var in = g.input(x);
    Var out = f(g, in);
    g.backward(out);
    analytic = g.grad(in);
  }
  auto eval = [&](const Tensor& t) {
    Graph g;
    g.set_grad_enabled(false);
    return f(g, g.constant(t)).value()[0];
  };
  GradCheckResult r;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double fp = eval(probe);
    probe[i] = orig - eps;
    const double fm = eval(probe);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double rel = relative_error(analytic[i], numeric, floor);
    r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[i] - numeric));
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
  }
  return r;
}

// Same comparison for a bound parameter tensor, restricted to `indices`: f
// builds the loss on a graph in which `param` is already referenced (e.g.
// through a model).
inline GradCheckResult grad_check_param_at(const std::function<Var(Graph&)>& f, Tensor& param,
                                           const std::vector<std::size_t>& indices, double eps = 1e-5,
                                           double floor = 1e-6) {
  const bool was = param.requires_grad();
  param.set_requires_grad(true);
  param.grad();
  param.zero_grad();
  {
    Graph g;
    Var out = f(g);
    g.backward(out);
  }
  Buffer analytic = param.grad();
  param.zero_grad();
  auto eval = [&] {
    Graph g;
    g.set_grad_enabled(false);
    return f(g).value()[0];
  };
  GradCheckResult r;
  for (std::size_t i : indices) {
    if (i >= param.numel()) throw IndexError("grad_check_param_at: index out of range");
    const double orig = param[i];
    param[i] = orig + eps;
    const double fp = eval();
    param[i] = orig - eps;
    const double fm = eval();
    param[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double rel = relative_error(analytic[i], numeric, floor);
    r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[i] - numeric));
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
  }
  param.set_requires_grad(was);
  return r;
}

inline GradCheckResult grad_check_param(const std::function<Var(Graph&)>& f, Tensor& param, double eps = 1e-5,
                                        double floor = 1e-6) {
  std::vector<std::size_t> all(param.numel());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return grad_check_param_at(f, param, all, eps, floor);
}

}  // namespace bskim
