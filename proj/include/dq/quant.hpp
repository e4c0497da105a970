#pragma once

// k-bit activation quantization on a fixed truncation range.
//
// Grid: 2^bits levels i * range_max / (2^bits - 1), nearest rounding, ties
// toward +inf. The backward pass is straight-through: only the clamp (or the
// tanh squashing) contributes to the gradient, never the rounding.

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dq/ops.hpp"

namespace dq {

enum class QuantMode { off, uniform, tanh };

struct QuantConfig {
  int bits = 4;
  double range_max = 6.0;
  QuantMode mode = QuantMode::uniform;

  void validate() const {
    if (bits < 1 || bits > 8) throw std::invalid_argument("quant.bits must be in [1,8], got " + std::to_string(bits));
    if (!(range_max > 0)) throw std::invalid_argument("quant.range_max must be positive");
  }
  int levels() const { return (1 << bits) - 1; }
};

inline const char* to_string(QuantMode m) {
  switch (m) {
    case QuantMode::off: return "off";
    case QuantMode::uniform: return "uniform";
    case QuantMode::tanh: return "tanh";
  }
  return "?";
}

inline QuantMode parse_quant_mode(const std::string& s) {
  if (s == "off") return QuantMode::off;
  if (s == "uniform") return QuantMode::uniform;
  if (s == "tanh") return QuantMode::tanh;
  throw std::invalid_argument("unknown quantizer mode '" + s + "'");
}

// Level i of an n-step grid on [0, range]. Every caller computes levels with
// this exact expression so comparisons against enumeration are bit-exact.
template <typename T>
inline T grid_level(int i, int n, T range) {
  return static_cast<T>(i) * range / static_cast<T>(n);
}

// Nearest grid level to an in-range scalar; ties resolve to the upper level.
template <typename T>
T snap_to_grid(T x, int bits, T range) {
  const int n = (1 << bits) - 1;
  int guess = static_cast<int>(std::floor(x * static_cast<T>(n) / range));
  int best = 0;
  T best_d = std::numeric_limits<T>::infinity();
  for (int i = std::max(0, guess - 1); i <= std::min(n, guess + 2); ++i) {
    const T d = std::abs(x - grid_level(i, n, range));
    if (d <= best_d) {
      best_d = d;
      best = i;
    }
  }
  return grid_level(best, n, range);
}

// Non-differentiable projection onto the grid. Inputs must already lie in
// [0, range_max] up to 1e-6; values within that slack are clamped first.
template <typename T>
Tensor<T> quantize_uniform(const Tensor<T>& x, const QuantConfig& cfg) {
  cfg.validate();
  const T r = static_cast<T>(cfg.range_max);
  const T slack = T(1e-6);
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T v = in[i];
    if (!(v >= -slack && v <= r + slack))
      throw std::domain_error("quantize_uniform: value " + std::to_string(v) + " outside [0," +
                              std::to_string(cfg.range_max) + "]; clamp first");
    o[i] = snap_to_grid(std::min(std::max(v, T{0}), r), cfg.bits, r);
  }
  return out;
}

// Clamp to [0, range_max] then snap to the grid; gradient is the clamp's.
template <typename T>
Tensor<T> quantized_relu6(Tape<T>& tape, const Tensor<T>& x, const QuantConfig& cfg) {
  cfg.validate();
  const T r = static_cast<T>(cfg.range_max);
  const bool track = x.requires_grad();
  Tensor<T> out(x.shape(), track);
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i)
    o[i] = snap_to_grid(std::min(std::max(in[i], T{0}), r), cfg.bits, r);
  if (track) {
    tape.record(out, [x, out, r]() mutable {
      auto g = out.grad();
      auto in = x.data();
      auto gx = x.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (in[i] > T{0} && in[i] < r) gx[i] += g[i];
    });
  }
  return out;
}

// tanh squashing quantizer: u = (tanh(x)+1)/2 on [0,1], snapped to the grid,
// mapped back with 2u-1. With quantize=false the snap is skipped (plain tanh).
template <typename T>
Tensor<T> quantize_tanh(Tape<T>& tape, const Tensor<T>& x, const QuantConfig& cfg, bool quantize = true) {
  cfg.validate();
  const bool track = x.requires_grad();
  Tensor<T> out(x.shape(), track);
  auto o = out.mutable_data();
  auto in = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T u = (std::tanh(in[i]) + T{1}) / T{2};
    const T q = quantize ? snap_to_grid(std::min(std::max(u, T{0}), T{1}), cfg.bits, T{1}) : u;
    o[i] = T{2} * q - T{1};
  }
  if (track) {
    tape.record(out, [x, out]() mutable {
      auto g = out.grad();
      auto in = x.data();
      auto gx = x.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T t = std::tanh(in[i]);
        gx[i] += (T{1} - t * t) * g[i];
      }
    });
  }
  return out;
}

// Block activation: the truncating nonlinearity plus, when enabled, the
// quantizer selected by cfg.mode.
template <typename T>
Tensor<T> quantized_activation(Tape<T>& tape, const Tensor<T>& x, const QuantConfig& cfg, bool quantize = true) {
  switch (cfg.mode) {
    case QuantMode::uniform:
      if (quantize) return quantized_relu6(tape, x, cfg);
      return clamp(tape, x, T{0}, static_cast<T>(cfg.range_max));
    case QuantMode::tanh:
      return quantize_tanh(tape, x, cfg, quantize);
    case QuantMode::off:
      break;
  }
  return clamp(tape, x, T{0}, static_cast<T>(cfg.range_max));
}

}  // namespace dq
