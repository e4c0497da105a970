#include "dq/defenses.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace dq {

Tensor<float> bit_depth_reduce(const Tensor<float>& img, int bits) {
  if (bits < 1 || bits > 8) throw std::invalid_argument("bit_depth_reduce: bits must be in [1,8]");
  const float levels = static_cast<float>((1 << bits) - 1);
  Tensor<float> out(img.shape());
  auto o = out.mutable_data();
  auto in = img.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = std::round(in[i] * levels) / levels;
  return out;
}

Tensor<float> median_filter_2x2(const Tensor<float>& img) {
  if (img.rank() != 3 && img.rank() != 4) throw ShapeError("median_filter_2x2: expected [C,H,W] or [N,C,H,W]");
  const std::size_t H = img.dim(img.rank() - 2), W = img.dim(img.rank() - 1);
  if (H < 1 || W < 1) throw ShapeError("median_filter_2x2: empty image");
  const std::size_t planes = img.numel() / (H * W);
  Tensor<float> out(img.shape());
  auto o = out.mutable_data();
  auto in = img.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = in.data() + p * H * W;
    float* dst = o.data() + p * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      const std::size_t y1 = std::min(y + 1, H - 1);
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t x1 = std::min(x + 1, W - 1);
        std::array<float, 4> w{src[y * W + x], src[y * W + x1], src[y1 * W + x], src[y1 * W + x1]};
        std::sort(w.begin(), w.end());
        dst[y * W + x] = 0.5f * (w[1] + w[2]);
      }
    }
  }
  return out;
}

Tensor<float> squeeze(const Tensor<float>& x, const SqueezeConfig& cfg) {
  cfg.validate();
  Tensor<float> out = bit_depth_reduce(x, cfg.color_bits);
  return cfg.median ? median_filter_2x2(out) : out;
}

std::vector<bool> feature_squeeze_detect(const Classifier& model, const Tensor<float>& x, const SqueezeConfig& cfg) {
  const auto raw = predict(model, x);
  const auto squeezed = predict(model, squeeze(x, cfg));
  std::vector<bool> flags(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) flags[i] = raw[i] != squeezed[i];
  return flags;
}

const char* to_string(AdvMethod m) { return m == AdvMethod::rfgsm ? "rfgsm" : "pgd"; }

AdvMethod parse_adv_method(const std::string& s) {
  if (s == "rfgsm" || s == "r+fgsm") return AdvMethod::rfgsm;
  if (s == "pgd") return AdvMethod::pgd;
  throw std::invalid_argument("unknown adversarial training method '" + s + "'");
}

double sample_epsilon(double delta, Rng& rng) {
  if (!(delta > 0)) throw std::invalid_argument("sample_epsilon: delta must be positive");
  std::normal_distribution<double> normal(0.0, delta);
  return std::clamp(std::abs(normal(rng)), 0.0, 2.0 * delta);
}

double sample_epsilon(double delta, std::uint64_t seed) {
  Rng rng(seed);
  return sample_epsilon(delta, rng);
}

}  // namespace dq
