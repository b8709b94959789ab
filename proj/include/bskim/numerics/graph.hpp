#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bskim/numerics/tensor.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace bskim {

#if defined(__GLIBC__)
namespace detail {
// Attention-sized buffers are allocated and freed on every forward pass;
// keeping them on the heap instead of fresh mmap regions avoids page faults.
inline const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  return true;
}();
}  // namespace detail
#endif

class Graph;

// Handle to a node in a Graph. Cheap to copy; valid as long as the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  inline const Tensor& value() const;
  inline const Shape& shape() const;
  inline bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Tape of op records. Nodes are appended in execution order, so the node
// vector is already a topological order and backward is a reverse sweep.
//
// Leaves either own their tensor (constants, inputs) or bind an external
// tensor (parameters); gradients of bound leaves accumulate into the
// external tensor's grad slot across backward calls.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor t) { return push(std::move(t), nullptr, false, {}); }

  // Owned leaf whose gradient is tracked; used for inputs under test.
  Var input(Tensor t) { return push(std::move(t), nullptr, grad_enabled_, {}); }

  Var bind(Tensor& external) {
    return push(Tensor{}, &external, grad_enabled_ && external.requires_grad(), {});
  }

  // Records the result of an op. The backward closure is kept only when some
  // input participates in differentiation.
  Var record(std::string_view op, Tensor out, std::initializer_list<Var> inputs, BackwardFn fn) {
    return record(op, std::move(out), std::vector<Var>(inputs), std::move(fn));
  }

  Var record(std::string_view op, Tensor out, const std::vector<Var>& inputs, BackwardFn fn) {
    if (!out.all_finite())
      throw NumericError(std::string(op) + ": non-finite value in output " + shape_str(out.shape()));
    bool rg = false;
    if (grad_enabled_)
      for (const auto& v : inputs) rg = rg || nodes_[v.id()].requires_grad;
    return push(std::move(out), nullptr, rg, rg ? std::move(fn) : BackwardFn{});
  }

  const Tensor& value(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.owned;
  }
  const Tensor& value(Var v) const { return value(v.id()); }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }

  // Gradient buffer of a node, allocated (zeroed) on first access.
  Buffer& grad(std::size_t id) {
    Node& n = nodes_[id];
    return n.external ? n.external->grad() : n.owned.grad();
  }
  Buffer& grad(Var v) { return grad(v.id()); }

  void backward(Var root) {
    const std::size_t r = root.id();
    if (value(r).numel() != 1)
      throw DimensionError("backward root must be a scalar, got " + shape_str(value(r).shape()));
    if (!nodes_[r].requires_grad) return;
    for (std::size_t i = 0; i <= r; ++i) {
      Node& n = nodes_[i];
      if (!n.external && n.requires_grad && n.owned.has_grad()) n.owned.zero_grad();
    }
    grad(r)[0] = 1.0;
    for (std::size_t i = r + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward) continue;
      const Tensor& t = n.external ? *n.external : n.owned;
      if (!t.has_grad()) continue;
      n.backward(*this, i);
    }
  }

  void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }
  bool grad_enabled() const noexcept { return grad_enabled_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor owned;
    Tensor* external = nullptr;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor t, Tensor* ext, bool rg, BackwardFn fn) {
    nodes_.push_back(Node{std::move(t), ext, rg, std::move(fn)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
};

inline const Tensor& Var::value() const { return graph_->value(id_); }
inline const Shape& Var::shape() const { return graph_->value(id_).shape(); }
inline bool Var::requires_grad() const { return graph_->requires_grad(id_); }

}  // namespace bskim
