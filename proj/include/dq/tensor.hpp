#pragma once

// Dense n-d tensors with a reverse-mode recording tape.
//
// A Tensor is a cheap handle onto shared storage. Ops never modify their
// inputs; the only in-place writers are optimizers and initializers, which go
// through mutable_data(). Gradients live on the handle's node, so a detach()ed
// view shares values with the original but never receives its gradients.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dq/error.hpp"

namespace dq {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
class Tape;

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : Tensor(Shape{0}) {}

  explicit Tensor(Shape shape, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    for (auto d : shape) {
      if (d == 0 && shape.size() != 1)
        throw ShapeError("tensor dimensions must be positive: " + to_string(shape));
    }
    node_->data = std::make_shared<std::vector<T>>(numel_of(shape), T{0});
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (numel_of(shape) != values.size())
      throw ShapeError("value count " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape));
    node_->data = std::make_shared<std::vector<T>>(std::move(values));
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  const Shape& shape() const noexcept { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const noexcept { return node_->shape.size(); }
  std::size_t numel() const noexcept { return node_->data->size(); }

  std::span<const T> data() const noexcept { return *node_->data; }
  // Escape hatch for optimizers, initializers and checkpoint loading.
  std::span<T> mutable_data() noexcept { return *node_->data; }
  const T& operator[](std::size_t i) const { return (*node_->data)[i]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return (*node_->data)[0];
  }

  bool requires_grad() const noexcept { return node_->requires_grad; }
  void set_requires_grad(bool v) noexcept { node_->requires_grad = v; }

  bool has_grad() const noexcept { return node_->has_grad; }
  std::span<const T> grad() const {
    if (!node_->has_grad) throw TapeError("tensor has no gradient");
    return node_->grad;
  }
  void zero_grad() {
    node_->grad.assign(numel(), T{0});
    node_->has_grad = true;
  }
  void clear_grad() noexcept {
    node_->grad.clear();
    node_->has_grad = false;
  }

  // Shares the value buffer; fresh node without gradient tracking.
  Tensor detach() const {
    Tensor out;
    out.node_ = std::make_shared<Node>();
    out.node_->shape = node_->shape;
    out.node_->data = node_->data;
    return out;
  }

  // Deep copy of the values; fresh node.
  Tensor clone(bool requires_grad = false) const {
    return Tensor(node_->shape, *node_->data, requires_grad);
  }

  bool same_node(const Tensor& o) const noexcept { return node_ == o.node_; }

  // Gradient accumulation used by op backward closures. The handle is const;
  // the node it points to is not.
  std::span<T> grad_accumulator() const {
    if (!node_->has_grad) {
      node_->grad.assign(numel(), T{0});
      node_->has_grad = true;
    }
    return node_->grad;
  }

 private:
  struct Node {
    Shape shape;
    std::shared_ptr<std::vector<T>> data;
    std::vector<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

// Ordered record of executed ops. Ops append an entry only when at least one
// input requires a gradient, so untracked inference leaves the tape empty.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
    for (auto* t : inputs)
      if (t && t->requires_grad()) return true;
    return false;
  }

  void record(Tensor<T> output, BackwardFn fn) {
    if (consumed_) throw TapeError("tape already consumed by backward()");
    entries_.push_back({std::move(output), std::move(fn)});
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void backward(Tensor<T>& loss) {
    if (consumed_) throw TapeError("backward() called twice on the same tape");
    if (loss.numel() != 1) throw TapeError("loss must be a scalar, got " + to_string(loss.shape()));
    if (!loss.requires_grad()) throw TapeError("loss does not depend on any tracked tensor");
    consumed_ = true;
    loss.grad_accumulator()[0] += T{1};
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->output.has_grad()) it->fn();
    }
    entries_.clear();
  }

 private:
  struct Entry {
    Tensor<T> output;
    BackwardFn fn;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

}  // namespace dq
