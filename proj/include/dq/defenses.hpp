#pragma once

// Feature squeezing (detection) and adversarial training.

#include <cstdint>
#include <string>
#include <vector>

#include "dq/attacks.hpp"
#include "dq/rng.hpp"

namespace dq {

struct SqueezeConfig {
  int color_bits = 5;
  bool median = true;  // 2x2 median filter after bit reduction

  void validate() const {
    if (color_bits < 1 || color_bits > 8) throw std::invalid_argument("defense.squeeze.bits must be in [1,8]");
  }
};

// round(x * (2^bits - 1)) / (2^bits - 1), elementwise.
Tensor<float> bit_depth_reduce(const Tensor<float>& img, int bits);

// Per channel plane of a [C,H,W] or [N,C,H,W] tensor: each pixel becomes the
// median of the 2x2 window it anchors (itself, right, below, below-right),
// with edge replication past the bottom/right border. The median of four
// values is the mean of the middle two.
Tensor<float> median_filter_2x2(const Tensor<float>& img);

Tensor<float> squeeze(const Tensor<float>& x, const SqueezeConfig& cfg);

// True where the prediction on the squeezed input differs from the raw one.
std::vector<bool> feature_squeeze_detect(const Classifier& model, const Tensor<float>& x, const SqueezeConfig& cfg);

enum class AdvMethod { rfgsm, pgd };

const char* to_string(AdvMethod m);
AdvMethod parse_adv_method(const std::string& s);

struct AdvTrainConfig {
  AdvMethod method = AdvMethod::rfgsm;
  double delta = 8.0;     // eps sampling scale, 0-255 units
  double test_eps = 8.0;  // fixed budget used at evaluation
  double mix = 1.0;       // fraction of each batch replaced by adversarial samples

  void validate() const {
    if (!(delta > 0)) throw std::invalid_argument("advtrain.delta must be positive");
    if (!(mix >= 0 && mix <= 1)) throw std::invalid_argument("advtrain.mix must be in [0,1]");
  }
};

// |N(0, delta)| clipped to [0, 2 delta], in 0-255 units.
double sample_epsilon(double delta, Rng& rng);
double sample_epsilon(double delta, std::uint64_t seed);

}  // namespace dq
