#pragma once

#include <random>
#include <vector>

#include "dq/data.hpp"
#include "dq/model.hpp"

namespace dq::testing {

// logits = W flatten(x) + b.
class LinearClassifier : public Classifier {
 public:
  LinearClassifier(ImageShape shape, std::size_t classes, std::uint64_t seed) : shape_(shape), classes_(classes) {
    const std::size_t d = shape[0] * shape[1] * shape[2];
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    std::vector<float> w(classes * d), b(classes);
    for (auto& e : w) e = n(rng);
    for (auto& e : b) e = n(rng);
    w_ = Tensor<float>(Shape{classes, d}, w);
    b_ = Tensor<float>(Shape{classes}, b);
  }
  Tensor<float> logits(Tape<float>& tape, const Tensor<float>& x) const override {
    return dense(tape, flatten(tape, x), w_, b_);
  }
  ImageShape input_shape() const override { return shape_; }
  std::size_t num_classes() const override { return classes_; }
  const Tensor<float>& weight() const { return w_; }
  const Tensor<float>& bias() const { return b_; }

 private:
  ImageShape shape_;
  std::size_t classes_;
  Tensor<float> w_, b_;
};

// Same logits for every input.
class ConstantClassifier : public Classifier {
 public:
  explicit ConstantClassifier(std::size_t classes, int winner = 0) : classes_(classes), winner_(winner) {}
  // Zero weights and a one-hot bias: the output is tracked but carries no input gradient.
  Tensor<float> logits(Tape<float>& tape, const Tensor<float>& x) const override {
    const Tensor<float> flat = flatten(tape, x);
    Tensor<float> bias(Shape{classes_});
    bias.mutable_data()[static_cast<std::size_t>(winner_)] = 1.0f;
    return dense(tape, flat, Tensor<float>(Shape{classes_, flat.dim(1)}), bias);
  }
  ImageShape input_shape() const override { return {3, 8, 8}; }
  std::size_t num_classes() const override { return classes_; }

 private:
  std::size_t classes_;
  int winner_;
};

inline Tensor<float> uniform_images(std::size_t n, ImageShape s, std::uint64_t seed, float lo = 0, float hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(lo, hi);
  std::vector<float> v(n * s[0] * s[1] * s[2]);
  for (auto& e : v) e = u(rng);
  return Tensor<float>(Shape{n, s[0], s[1], s[2]}, v);
}

inline std::vector<int> cyclic_labels(std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = static_cast<int>(i % classes);
  return y;
}

// Small 3-block quantized CNN on 8x8 inputs.
inline ModelSpec tiny_spec(std::size_t classes = 4) {
  ModelSpec s;
  s.input = {3, 8, 8};
  s.num_classes = classes;
  s.blocks = parse_blocks("4:3:1,8:3:2,8:3:1:r");
  return s;
}

}  // namespace dq::testing
