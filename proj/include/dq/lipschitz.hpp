#pragma once

// Orthogonality regularizer and the non-expansive building blocks around it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dq/ops.hpp"

namespace dq {

enum class Aggregation { convex, plain_add };

inline const char* to_string(Aggregation a) { return a == Aggregation::convex ? "convex" : "plain-add"; }

inline Aggregation parse_aggregation(const std::string& s) {
  if (s == "convex") return Aggregation::convex;
  if (s == "plain-add") return Aggregation::plain_add;
  throw std::invalid_argument("unknown aggregation '" + s + "'");
}

struct RegConfig {
  double beta = 0.0;
  std::vector<std::string> apply_to;  // layer names; empty means every weight matrix
  Aggregation aggregation = Aggregation::convex;

  void validate() const {
    if (!(beta >= 0)) throw std::invalid_argument("reg.beta must be non-negative");
  }
  bool applies(const std::string& layer) const {
    return apply_to.empty() || std::find(apply_to.begin(), apply_to.end(), layer) != apply_to.end();
  }
};

template <typename T>
struct NamedWeight {
  std::string name;
  Tensor<T> weight;
};

// [Cout, Cin, k, k] -> [Cout, Cin*k*k]; row r is filter r flattened.
template <typename T>
Tensor<T> reshape_conv_weight(Tape<T>& tape, const Tensor<T>& w) {
  detail::require(w.rank() == 4, "reshape_conv_weight: expected rank-4 weight, got " + to_string(w.shape()));
  return reshape(tape, w, Shape{w.dim(0), w.numel() / w.dim(0)});
}

// ||G - I||_F^2 with G the Gram matrix of the smaller side of W:
// W W^T when rows <= cols, otherwise W^T W.
template <typename T>
Tensor<T> orthogonal_penalty(Tape<T>& tape, const Tensor<T>& w) {
  detail::require(w.rank() == 2, "orthogonal_penalty: expected a matrix, got " + to_string(w.shape()));
  const std::size_t R = w.dim(0), C = w.dim(1);
  const bool rows_side = R <= C;
  const std::size_t n = rows_side ? R : C;
  auto W = w.data();
  std::vector<T> dev(n * n, T{0});  // G - I
  if (rows_side) {
    for (std::size_t i = 0; i < R; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        T acc{0};
        for (std::size_t k = 0; k < C; ++k) acc += W[i * C + k] * W[j * C + k];
        dev[i * n + j] = dev[j * n + i] = acc;
      }
  } else {
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t i = 0; i < C; ++i) {
        const T a = W[r * C + i];
        if (a == T{0}) continue;
        for (std::size_t j = 0; j < C; ++j) dev[i * n + j] += a * W[r * C + j];
      }
  }
  T pen{0};
  for (std::size_t i = 0; i < n; ++i) dev[i * n + i] -= T{1};
  for (T d : dev) pen += d * d;

  const bool track = w.requires_grad();
  Tensor<T> out = Tensor<T>::scalar(pen, track);
  if (track) {
    tape.record(out, [w, out, dev = std::move(dev), R, C, rows_side]() mutable {
      const T g = out.grad()[0] * T{4};
      auto W = w.data();
      auto gw = w.grad_accumulator();
      std::vector<T> tmp(R * C, T{0});
      if (rows_side)
        detail::gemm_acc(R, C, R, dev.data(), W.data(), tmp.data());  // (W W^T - I) W
      else
        detail::gemm_acc(R, C, C, W.data(), dev.data(), tmp.data());  // W (W^T W - I)
      for (std::size_t i = 0; i < tmp.size(); ++i) gw[i] += g * tmp[i];
    });
  }
  return out;
}

// ce + beta/2 * sum of penalties over the selected weights. Conv weights are
// viewed as [Cout, Cin*k*k] matrices. beta == 0 returns ce itself.
template <typename T>
Tensor<T> total_loss(Tape<T>& tape, const Tensor<T>& ce, const std::vector<NamedWeight<T>>& weights,
                     const RegConfig& cfg) {
  cfg.validate();
  if (cfg.beta == 0.0) return ce;
  Tensor<T> acc = ce;
  for (const auto& nw : weights) {
    if (!cfg.applies(nw.name)) continue;
    Tensor<T> mat = nw.weight.rank() == 4 ? reshape_conv_weight(tape, nw.weight) : nw.weight;
    Tensor<T> pen = orthogonal_penalty(tape, mat);
    acc = add(tape, acc, scale(tape, pen, static_cast<T>(cfg.beta / 2.0)));
  }
  return acc;
}

// alpha * a + (1 - alpha) * b with a trainable 1-element alpha.
template <typename T>
Tensor<T> convex_aggregate(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& alpha) {
  detail::require(a.shape() == b.shape(),
                  "convex_aggregate: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  detail::require(alpha.numel() == 1, "convex_aggregate: alpha must be a single coefficient");
  const T al = alpha[0];
  const bool track = Tape<T>::any_requires_grad({&a, &b, &alpha});
  Tensor<T> out(a.shape(), track);
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = al * x[i] + (T{1} - al) * y[i];
  if (track) {
    tape.record(out, [a, b, alpha, out, al]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_accumulator();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += al * g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_accumulator();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += (T{1} - al) * g[i];
      }
      if (alpha.requires_grad()) {
        auto x = a.data();
        auto y = b.data();
        T acc{0};
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * (x[i] - y[i]);
        alpha.grad_accumulator()[0] += acc;
      }
    });
  }
  return out;
}

template <typename T>
T project_coeff(T alpha) {
  return std::min(std::max(alpha, T{0}), T{1});
}

// Clips a trainable aggregation coefficient back into [0,1] in place.
template <typename T>
void project_coeff(Tensor<T>& alpha) {
  for (auto& v : alpha.mutable_data()) v = project_coeff(v);
}

// Largest singular value by power iteration on W^T W, seeded start vector.
template <typename T>
double spectral_norm(const Tensor<T>& w, int iters, std::uint64_t seed) {
  detail::require(w.rank() == 2, "spectral_norm: expected a matrix");
  if (iters < 1) throw std::invalid_argument("spectral_norm: iters must be >= 1");
  const std::size_t R = w.dim(0), C = w.dim(1);
  auto W = w.data();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(C), u(R);
  for (auto& e : v) e = normal(rng);
  auto normalize = [](std::vector<double>& x) {
    double s = 0;
    for (double e : x) s += e * e;
    s = std::sqrt(s);
    if (s > 0)
      for (double& e : x) e /= s;
    return s;
  };
  if (normalize(v) == 0) return 0.0;
  double sigma = 0;
  for (int it = 0; it < iters; ++it) {
    for (std::size_t r = 0; r < R; ++r) {
      double acc = 0;
      for (std::size_t c = 0; c < C; ++c) acc += static_cast<double>(W[r * C + c]) * v[c];
      u[r] = acc;
    }
    sigma = normalize(u);
    if (sigma == 0) return 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0;
      for (std::size_t r = 0; r < R; ++r) acc += static_cast<double>(W[r * C + c]) * u[r];
      v[c] = acc;
    }
    sigma = normalize(v);  // ||W^T u|| with u = Wv/||Wv||
    if (sigma == 0) return 0.0;
  }
  return sigma;
}

}  // namespace dq
