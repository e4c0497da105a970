#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dq/model.hpp"

namespace dq {

// Images [N,C,H,W] in [0,1], row-major, with integer labels.
struct Dataset {
  ImageShape image_shape{3, 32, 32};
  std::size_t num_classes = 10;
  std::vector<float> images;
  std::vector<int> labels;
  std::string split;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_size() const noexcept { return image_shape[0] * image_shape[1] * image_shape[2]; }
  bool empty() const noexcept { return labels.empty(); }

  std::span<const float> image(std::size_t i) const {
    return std::span<const float>(images).subspan(i * image_size(), image_size());
  }
  Tensor<float> batch_images(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
  Tensor<float> range_images(std::size_t begin, std::size_t count) const;
  std::vector<int> range_labels(std::size_t begin, std::size_t count) const;

  Dataset subset(std::size_t begin, std::size_t count) const;
  // Labels in range, pixels in [0,1], sizes consistent.
  void validate() const;
};

// CIFAR-10 binary records: 1 label byte + C*H*W pixel bytes (channel planes,
// row-major). Pixels are scaled by 1/255. `limit` loads only a prefix.
Dataset load_cifar10_binary(const std::filesystem::path& path, std::optional<std::size_t> limit = std::nullopt,
                            ImageShape shape = {3, 32, 32}, std::string split = "train");
// Pixels are rounded to the nearest byte on write.
void save_cifar10_binary(const std::filesystem::path& path, const Dataset& data);

struct SynthOptions {
  double noise = 0.1;             // per-pixel Gaussian noise std
  std::size_t smooth_radius = 0;  // box-blur radius applied to class templates
  std::size_t max_shift = 0;      // per-sample cyclic translation of the template, in pixels
  double contrast_jitter = 0;     // per-sample template gain drawn from U(1 - j, 1 + j)
  // Samples are drawn from a stream keyed by split; class templates depend on
  // the seed only, so "train" and "test" draws share the same classes.
  std::string split = "train";
};

// Gaussian class blobs around 0.5 in pixel space, clipped to [0,1]. Class
// means sit `separation` noise standard deviations apart on average, so large
// separations are linearly separable. Labels are exactly balanced and
// interleaved (0,1,...,K-1,0,1,...).
Dataset synth_blobs(std::size_t num_classes, std::size_t n_per_class, ImageShape shape, double separation,
                    std::uint64_t seed, const SynthOptions& opts = {});

// Average-pool by 2 in both spatial dimensions.
Dataset downsample2x(const Dataset& data);

}  // namespace dq
