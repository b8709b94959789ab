#pragma once

#include <deque>
#include <string>
#include <vector>

#include "bskim/numerics/tensor.hpp"

namespace bskim {

// Named tensors in insertion order with stable addresses. Trainable entries
// have requires_grad set; buffers (e.g. running statistics) do not.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  Tensor& add(std::string name, Tensor t, bool trainable = true) {
    for (const auto& e : entries_)
      if (e.name == name) throw ConfigError("duplicate parameter name '" + name + "'");
    t.set_requires_grad(trainable);
    entries_.push_back(Entry{std::move(name), std::move(t)});
    return entries_.back().tensor;
  }

  Tensor* find(const std::string& name) {
    for (auto& e : entries_)
      if (e.name == name) return &e.tensor;
    return nullptr;
  }

  Tensor& at(const std::string& name) {
    if (Tensor* t = find(name)) return *t;
    throw IndexError("no parameter named '" + name + "'");
  }

  std::deque<Entry>& entries() noexcept { return entries_; }
  const std::deque<Entry>& entries() const noexcept { return entries_; }

  void zero_grad() {
    for (auto& e : entries_)
      if (e.tensor.has_grad()) e.tensor.zero_grad();
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_)
      if (e.tensor.requires_grad()) n += e.tensor.numel();
    return n;
  }

 private:
  std::deque<Entry> entries_;
};

}  // namespace bskim
