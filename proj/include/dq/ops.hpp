#pragma once

// Differentiable tensor ops. Every op takes the tape it records onto; the
// output requires a gradient iff one of its inputs does.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <cblas.h>

#include "dq/tensor.hpp"

namespace dq {

enum class Mode { train, eval };

namespace detail {

// Row-major GEMM accumulators. float and double go through CBLAS; other
// element types use the reference loops.

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(M), int(N), int(K), 1.0f, A, int(K), B, int(N), 1.0f,
                C, int(N));
  } else if constexpr (std::is_same_v<T, double>) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(M), int(N), int(K), 1.0, A, int(K), B, int(N), 1.0,
                C, int(N));
  } else {
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t j = 0; j < N; ++j) C[i * N + j] += A[i * K + k] * B[k * N + j];
  }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(M), int(N), int(K), 1.0f, A, int(M), B, int(N), 1.0f,
                C, int(N));
  } else if constexpr (std::is_same_v<T, double>) {
    cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(M), int(N), int(K), 1.0, A, int(M), B, int(N), 1.0,
                C, int(N));
  } else {
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) C[i * N + j] += A[k * M + i] * B[k * N + j];
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C) {
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(M), int(N), int(K), 1.0f, A, int(K), B, int(K), 1.0f,
                C, int(N));
  } else if constexpr (std::is_same_v<T, double>) {
    cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, int(M), int(N), int(K), 1.0, A, int(K), B, int(K), 1.0,
                C, int(N));
  } else {
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        T acc{0};
        for (std::size_t k = 0; k < K; ++k) acc += A[i * K + k] * B[j * K + k];
        C[i * N + j] += acc;
      }
  }
}

struct ConvGeometry {
  std::size_t n, cin, h, w, cout, k, stride, pad, oh, ow;
  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return oh * ow; }
};

// cols[(c*k + ki)*k + kj][oy*ow + ox]
template <typename T>
void im2col(const ConvGeometry& g, const T* img, T* cols) {
  const std::size_t P = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        T* row = cols + ((c * g.k + ki) * g.k + kj) * P;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            row[oy * g.ow + ox] =
                (iy < 0 || ix < 0 || iy >= static_cast<long>(g.h) || ix >= static_cast<long>(g.w))
                    ? T{0}
                    : img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)];
          }
        }
      }
}

template <typename T>
void col2im_acc(const ConvGeometry& g, const T* cols, T* img) {
  const std::size_t P = g.pixels();
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const T* row = cols + ((c * g.k + ki) * g.k + kj) * P;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            img[(c * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                row[oy * g.ow + ox];
          }
        }
      }
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const bool track = Tape<T>::any_requires_grad({&a, &b});
  Tensor<T> out(a.shape(), track);
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (track) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      for (const Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto ga = t->grad_accumulator();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "mul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  const bool track = Tape<T>::any_requires_grad({&a, &b});
  Tensor<T> out(a.shape(), track);
  auto o = out.mutable_data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  if (track) {
    tape.record(out, [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_accumulator();
        auto y = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_accumulator();
        auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& a, T c) {
  const bool track = a.requires_grad();
  Tensor<T> out(a.shape(), track);
  auto o = out.mutable_data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = c * x[i];
  if (track) {
    tape.record(out, [a, out, c]() mutable {
      auto g = out.grad();
      auto ga = a.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  const bool track = a.requires_grad();
  T acc{0};
  for (T v : a.data()) acc += v;
  Tensor<T> out(Shape{1}, std::vector<T>{acc}, track);
  if (track) {
    tape.record(out, [a, out]() mutable {
      const T g = out.grad()[0];
      for (auto& v : a.grad_accumulator()) v += g;
    });
  }
  return out;
}

// Same values, new shape. Row-major layout makes this a pure relabeling.
template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& a, Shape shape) {
  detail::require(numel_of(shape) == a.numel(),
                  "reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  const bool track = a.requires_grad();
  Tensor<T> out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()), track);
  if (track) {
    tape.record(out, [a, out]() mutable {
      auto g = out.grad();
      auto ga = a.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

// [N, ...] -> [N, prod(...)]
template <typename T>
Tensor<T> flatten(Tape<T>& tape, const Tensor<T>& a) {
  detail::require(a.rank() >= 1, "flatten: rank-0 tensor");
  const std::size_t n = a.dim(0);
  return reshape(tape, a, Shape{n, a.numel() / n});
}

// Elementwise clamp to [lo, hi]. Gradient passes on the open interval only,
// so the kinks at lo and hi take gradient 0.
template <typename T>
Tensor<T> clamp(Tape<T>& tape, const Tensor<T>& a, T lo, T hi) {
  const bool track = a.requires_grad();
  Tensor<T> out(a.shape(), track);
  auto o = out.mutable_data();
  auto x = a.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::min(std::max(x[i], lo), hi);
  if (track) {
    tape.record(out, [a, out, lo, hi]() mutable {
      auto g = out.grad();
      auto x = a.data();
      auto ga = a.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > lo && x[i] < hi) ga[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> relu6(Tape<T>& tape, const Tensor<T>& a) {
  return clamp(tape, a, T{0}, T{6});
}

// ---------------------------------------------------------------------------
// Layers

template <typename T>
Tensor<T> conv2d(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight,
                 std::size_t stride, std::size_t pad) {
  detail::require(input.rank() == 4, "conv2d: input must be [N,C,H,W], got " + to_string(input.shape()));
  detail::require(weight.rank() == 4,
                  "conv2d: weight must be [Cout,Cin,k,k], got " + to_string(weight.shape()));
  detail::require(weight.dim(2) == weight.dim(3), "conv2d: kernel must be square");
  detail::require(input.dim(1) == weight.dim(1),
                  "conv2d: input has " + std::to_string(input.dim(1)) + " channels, weight expects " +
                      std::to_string(weight.dim(1)));
  detail::require(stride >= 1, "conv2d: stride must be >= 1");
  detail::ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), weight.dim(0),
                         weight.dim(2), stride, pad, 0, 0};
  detail::require(g.k <= g.h + 2 * pad && g.k <= g.w + 2 * pad,
                  "conv2d: kernel larger than padded input");
  g.oh = (g.h + 2 * pad - g.k) / stride + 1;
  g.ow = (g.w + 2 * pad - g.k) / stride + 1;

  const bool track = Tape<T>::any_requires_grad({&input, &weight});
  Tensor<T> out(Shape{g.n, g.cout, g.oh, g.ow}, track);
  const std::size_t K = g.patch(), P = g.pixels(), NP = g.n * P;
  // Whole-batch im2col: column s*P + p holds output pixel p of sample s.
  auto cols = std::make_shared<std::vector<T>>(K * NP);
  {
    std::vector<T> one(K * P);
    auto x = input.data();
    for (std::size_t s = 0; s < g.n; ++s) {
      detail::im2col(g, x.data() + s * g.cin * g.h * g.w, one.data());
      for (std::size_t k = 0; k < K; ++k)
        std::copy_n(one.data() + k * P, P, cols->data() + k * NP + s * P);
    }
  }
  std::vector<T> prod(g.cout * NP, T{0});
  detail::gemm_acc(g.cout, NP, K, weight.data().data(), cols->data(), prod.data());
  auto o = out.mutable_data();
  for (std::size_t s = 0; s < g.n; ++s)
    for (std::size_t co = 0; co < g.cout; ++co)
      std::copy_n(prod.data() + co * NP + s * P, P, o.data() + (s * g.cout + co) * P);
  if (track) {
    tape.record(out, [input, weight, out, g, cols]() mutable {
      const std::size_t K = g.patch(), P = g.pixels(), NP = g.n * P;
      auto go = out.grad();
      std::vector<T> gm(g.cout * NP);
      for (std::size_t s = 0; s < g.n; ++s)
        for (std::size_t co = 0; co < g.cout; ++co)
          std::copy_n(go.data() + (s * g.cout + co) * P, P, gm.data() + co * NP + s * P);
      if (weight.requires_grad()) {
        // dW[Cout,K] += G[Cout,NP] * cols^T[NP,K]
        detail::gemm_nt_acc(g.cout, K, NP, gm.data(), cols->data(), weight.grad_accumulator().data());
      }
      if (input.requires_grad()) {
        std::vector<T> dcols(K * NP, T{0});
        // dcols[K,NP] += W^T[K,Cout] * G[Cout,NP]
        detail::gemm_tn_acc(K, NP, g.cout, weight.data().data(), gm.data(), dcols.data());
        T* gx = input.grad_accumulator().data();
        std::vector<T> one(K * P);
        for (std::size_t s = 0; s < g.n; ++s) {
          for (std::size_t k = 0; k < K; ++k)
            std::copy_n(dcols.data() + k * NP + s * P, P, one.data() + k * P);
          detail::col2im_acc(g, one.data(), gx + s * g.cin * g.h * g.w);
        }
      }
    });
  }
  return out;
}

// out[N,K] = x[N,D] * W[K,D]^T + b[K]
template <typename T>
Tensor<T> dense(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require(input.rank() == 2 && weight.rank() == 2 && bias.rank() == 1,
                  "dense: expected [N,D], [K,D], [K]");
  detail::require(input.dim(1) == weight.dim(1),
                  "dense: inner dimensions " + std::to_string(input.dim(1)) + " vs " +
                      std::to_string(weight.dim(1)));
  detail::require(bias.dim(0) == weight.dim(0), "dense: bias length does not match output width");
  const std::size_t N = input.dim(0), D = input.dim(1), K = weight.dim(0);
  const bool track = Tape<T>::any_requires_grad({&input, &weight, &bias});
  Tensor<T> out(Shape{N, K}, track);
  auto x = input.data();
  auto w = weight.data();
  auto b = bias.data();
  auto o = out.mutable_data();
  for (std::size_t n = 0; n < N; ++n) std::copy(b.begin(), b.end(), o.begin() + static_cast<std::ptrdiff_t>(n * K));
  detail::gemm_nt_acc(N, K, D, x.data(), w.data(), o.data());
  if (track) {
    tape.record(out, [input, weight, bias, out, N, D, K]() mutable {
      auto go = out.grad();
      if (input.requires_grad()) {
        // dX[N,D] += G[N,K] * W[K,D]
        detail::gemm_acc(N, D, K, go.data(), weight.data().data(), input.grad_accumulator().data());
      }
      if (weight.requires_grad()) {
        // dW[K,D] += G^T[K,N] * X[N,D]
        detail::gemm_tn_acc(K, D, N, go.data(), input.data().data(), weight.grad_accumulator().data());
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad_accumulator();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t k = 0; k < K; ++k) gb[k] += go[n * K + k];
      }
    });
  }
  return out;
}

// Running statistics for batch normalization. Running estimates follow
// r <- momentum * r + (1 - momentum) * batch.
template <typename T>
struct BatchNormState {
  explicit BatchNormState(std::size_t channels = 0, T momentum = T(0.9), T eps = T(1e-5))
      : running_mean(Shape{std::max<std::size_t>(channels, 1)}),
        running_var(Shape{std::max<std::size_t>(channels, 1)}, std::vector<T>(std::max<std::size_t>(channels, 1), T{1})),
        momentum(momentum),
        eps(eps) {}
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum;
  T eps;
};

// Per-channel normalization of [N,C] or [N,C,H,W].
template <typename T>
Tensor<T> batchnorm(Tape<T>& tape, const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                    BatchNormState<T>& state, Mode mode) {
  detail::require(input.rank() == 2 || input.rank() == 4, "batchnorm: input must be [N,C] or [N,C,H,W]");
  const std::size_t N = input.dim(0), C = input.dim(1);
  const std::size_t S = input.rank() == 4 ? input.dim(2) * input.dim(3) : 1;
  detail::require(gamma.numel() == C && beta.numel() == C,
                  "batchnorm: gamma/beta length must equal channel count " + std::to_string(C));
  detail::require(state.running_mean.numel() == C, "batchnorm: running statistics size mismatch");

  const std::size_t m = N * S;
  std::vector<T> mean(C), inv_std(C);
  auto x = input.data();
  if (mode == Mode::train) {
    auto rm = state.running_mean.mutable_data();
    auto rv = state.running_var.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
      T acc{0};
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t s = 0; s < S; ++s) acc += x[(n * C + c) * S + s];
      const T mu = acc / static_cast<T>(m);
      T var{0};
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t s = 0; s < S; ++s) {
          const T d = x[(n * C + c) * S + s] - mu;
          var += d * d;
        }
      const T biased = var / static_cast<T>(m);
      const T unbiased = m > 1 ? var / static_cast<T>(m - 1) : biased;
      mean[c] = mu;
      inv_std[c] = T{1} / std::sqrt(biased + state.eps);
      rm[c] = state.momentum * rm[c] + (T{1} - state.momentum) * mu;
      rv[c] = state.momentum * rv[c] + (T{1} - state.momentum) * unbiased;
    }
  } else {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = rm[c];
      inv_std[c] = T{1} / std::sqrt(rv[c] + state.eps);
    }
  }

  const bool track = Tape<T>::any_requires_grad({&input, &gamma, &beta});
  Tensor<T> out(input.shape(), track);
  Tensor<T> xhat(input.shape());
  auto o = out.mutable_data();
  auto xh = xhat.mutable_data();
  auto gm = gamma.data();
  auto bt = beta.data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t i = (n * C + c) * S + s;
        xh[i] = (x[i] - mean[c]) * inv_std[c];
        o[i] = gm[c] * xh[i] + bt[c];
      }

  if (track) {
    tape.record(out, [input, gamma, beta, out, xhat, inv_std, N, C, S, m, mode]() mutable {
      auto go = out.grad();
      auto xh = xhat.data();
      auto gm = gamma.data();
      std::vector<T> sum_g(C, T{0}), sum_gx(C, T{0});
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t s = 0; s < S; ++s) {
            const std::size_t i = (n * C + c) * S + s;
            sum_g[c] += go[i];
            sum_gx[c] += go[i] * xh[i];
          }
      if (gamma.requires_grad()) {
        auto gg = gamma.grad_accumulator();
        for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
      }
      if (beta.requires_grad()) {
        auto gb = beta.grad_accumulator();
        for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
      }
      if (input.requires_grad()) {
        auto gx = input.grad_accumulator();
        const T mm = static_cast<T>(m);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const T k = gm[c] * inv_std[c];
            for (std::size_t s = 0; s < S; ++s) {
              const std::size_t i = (n * C + c) * S + s;
              if (mode == Mode::train)
                gx[i] += k * (go[i] - sum_g[c] / mm - xh[i] * sum_gx[c] / mm);
              else
                gx[i] += k * go[i];
            }
          }
      }
    });
  }
  return out;
}

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> labels) {
  detail::require(logits.rank() == 2, "cross_entropy: logits must be [N,C]");
  const std::size_t N = logits.dim(0), C = logits.dim(1);
  detail::require(labels.size() == N, "cross_entropy: label count does not match batch size");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw std::out_of_range("cross_entropy: label " + std::to_string(y) + " outside [0," +
                              std::to_string(C) + ")");
  auto z = logits.data();
  Tensor<T> probs(Shape{N, C});
  auto p = probs.mutable_data();
  T total{0};
  for (std::size_t n = 0; n < N; ++n) {
    const T* zr = z.data() + n * C;
    const T mx = *std::max_element(zr, zr + C);
    T denom{0};
    for (std::size_t c = 0; c < C; ++c) {
      p[n * C + c] = std::exp(zr[c] - mx);
      denom += p[n * C + c];
    }
    for (std::size_t c = 0; c < C; ++c) p[n * C + c] /= denom;
    total += std::log(denom) - (zr[labels[n]] - mx);
  }
  const bool track = logits.requires_grad();
  Tensor<T> out = Tensor<T>::scalar(total / static_cast<T>(N), track);
  if (track) {
    std::vector<int> ys(labels.begin(), labels.end());
    tape.record(out, [lg = logits, out, probs, ys = std::move(ys), N, C]() mutable {
      const T g = out.grad()[0] / static_cast<T>(N);
      auto gl = lg.grad_accumulator();
      auto p = probs.data();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T onehot = static_cast<std::size_t>(ys[n]) == c ? T{1} : T{0};
          gl[n * C + c] += g * (p[n * C + c] - onehot);
        }
    });
  }
  return out;
}

}  // namespace dq
