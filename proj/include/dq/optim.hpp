#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "dq/tensor.hpp"

namespace dq {

// Heavy-ball SGD: v <- momentum * v + g; p <- p - lr * v.
// Velocity slots are bound to parameter positions on the first step.
template <typename T>
class SgdMomentum {
 public:
  explicit SgdMomentum(T momentum = T(0.9)) : momentum_(momentum) {}

  void step(std::span<Tensor<T>> params, T lr) {
    if (velocity_.empty()) {
      velocity_.reserve(params.size());
      for (const auto& p : params) velocity_.emplace_back(p.numel(), T{0});
    }
    if (velocity_.size() != params.size())
      throw ShapeError("optimizer: parameter list changed between steps");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& v = velocity_[i];
      if (v.size() != params[i].numel()) throw ShapeError("optimizer: parameter size changed between steps");
      auto p = params[i].mutable_data();
      const bool has = params[i].has_grad();
      std::span<const T> g = has ? params[i].grad() : std::span<const T>{};
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = momentum_ * v[j] + (has ? g[j] : T{0});
        p[j] -= lr * v[j];
      }
    }
  }

  static void zero_grad(std::span<Tensor<T>> params) {
    for (auto& p : params) p.clear_grad();
  }

  T momentum() const noexcept { return momentum_; }
  const std::vector<std::vector<T>>& velocity() const noexcept { return velocity_; }

 private:
  T momentum_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace dq
