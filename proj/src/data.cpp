#include "dq/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "dq/error.hpp"
#include "dq/rng.hpp"

namespace dq {

Tensor<float> Dataset::batch_images(std::span<const std::size_t> indices) const {
  const std::size_t d = image_size();
  Tensor<float> out(Shape{indices.size(), image_shape[0], image_shape[1], image_shape[2]});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto src = image(indices[i]);
    std::copy(src.begin(), src.end(), o.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return out;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

Tensor<float> Dataset::range_images(std::size_t begin, std::size_t count) const {
  const std::size_t d = image_size();
  auto first = images.begin() + static_cast<std::ptrdiff_t>(begin * d);
  return Tensor<float>(Shape{count, image_shape[0], image_shape[1], image_shape[2]},
                       std::vector<float>(first, first + static_cast<std::ptrdiff_t>(count * d)));
}

std::vector<int> Dataset::range_labels(std::size_t begin, std::size_t count) const {
  return std::vector<int>(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                          labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
}

Dataset Dataset::subset(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw std::out_of_range("dataset subset out of range");
  Dataset out{image_shape, num_classes, {}, range_labels(begin, count), split};
  auto first = images.begin() + static_cast<std::ptrdiff_t>(begin * image_size());
  out.images.assign(first, first + static_cast<std::ptrdiff_t>(count * image_size()));
  return out;
}

void Dataset::validate() const {
  if (images.size() != labels.size() * image_size())
    throw FormatError("dataset: " + std::to_string(images.size()) + " pixels for " + std::to_string(labels.size()) +
                      " labels of size " + std::to_string(image_size()));
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
      throw FormatError("dataset: label " + std::to_string(y) + " outside [0," + std::to_string(num_classes) + ")");
  for (float v : images)
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("dataset: pixel outside [0,1]");
}

Dataset load_cifar10_binary(const std::filesystem::path& path, std::optional<std::size_t> limit, ImageShape shape,
                            std::string split) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  Dataset ds;
  ds.image_shape = shape;
  ds.split = std::move(split);
  const std::size_t pixels = ds.image_size();
  const std::size_t record = pixels + 1;
  if (bytes.size() % record != 0)
    throw FormatError("truncated record at byte offset " + std::to_string(bytes.size() / record * record) + " in " +
                      path.string() + " (file size " + std::to_string(bytes.size()) + " is not a multiple of " +
                      std::to_string(record) + ")");
  std::size_t n = bytes.size() / record;
  if (limit) n = std::min(n, *limit);
  ds.labels.reserve(n);
  ds.images.reserve(n * pixels);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * record;
    if (rec[0] >= ds.num_classes)
      throw FormatError("label " + std::to_string(rec[0]) + " out of range at byte offset " +
                        std::to_string(r * record));
    ds.labels.push_back(rec[0]);
    for (std::size_t p = 0; p < pixels; ++p) ds.images.push_back(static_cast<float>(rec[1 + p]) / 255.0f);
  }
  return ds;
}

void save_cifar10_binary(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write dataset " + path.string());
  std::vector<unsigned char> rec(data.image_size() + 1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.labels[i] < 0 || data.labels[i] > 255) throw FormatError("label does not fit in a byte");
    rec[0] = static_cast<unsigned char>(data.labels[i]);
    auto img = data.image(i);
    for (std::size_t p = 0; p < img.size(); ++p)
      rec[1 + p] = static_cast<unsigned char>(std::lround(std::clamp(img[p], 0.0f, 1.0f) * 255.0f));
    os.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
  }
}

namespace {

// Separable box blur with edge clamping, applied per channel plane.
void box_blur(std::vector<double>& img, ImageShape s, std::size_t radius) {
  if (radius == 0) return;
  const long r = static_cast<long>(radius);
  const long H = static_cast<long>(s[1]), W = static_cast<long>(s[2]);
  std::vector<double> tmp(img.size());
  for (std::size_t c = 0; c < s[0]; ++c) {
    double* plane = img.data() + c * s[1] * s[2];
    double* t = tmp.data() + c * s[1] * s[2];
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double acc = 0;
        for (long d = -r; d <= r; ++d) acc += plane[y * W + std::clamp(x + d, 0L, W - 1)];
        t[y * W + x] = acc / static_cast<double>(2 * r + 1);
      }
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double acc = 0;
        for (long d = -r; d <= r; ++d) acc += t[std::clamp(y + d, 0L, H - 1) * W + x];
        plane[y * W + x] = acc / static_cast<double>(2 * r + 1);
      }
  }
}

}  // namespace

Dataset synth_blobs(std::size_t num_classes, std::size_t n_per_class, ImageShape shape, double separation,
                    std::uint64_t seed, const SynthOptions& opts) {
  if (!(separation > 0)) throw std::invalid_argument("synth_blobs: separation must be positive");
  if (num_classes < 2) throw std::invalid_argument("synth_blobs: need at least two classes");
  const std::size_t D = shape[0] * shape[1] * shape[2];

  Rng trng(derive_seed(seed, "synth/templates"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> templates(num_classes, std::vector<double>(D));
  for (auto& t : templates) {
    for (auto& v : t) v = normal(trng);
    box_blur(t, shape, opts.smooth_radius);
    double mean = 0;
    for (double v : t) mean += v;
    mean /= static_cast<double>(D);
    double rms = 0;
    for (double& v : t) {
      v -= mean;
      rms += v * v;
    }
    rms = std::sqrt(rms / static_cast<double>(D));
    for (double& v : t) v /= rms;
  }
  // Scale so the mean pairwise distance between class means is separation * noise.
  double mean_dist = 0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < num_classes; ++a)
    for (std::size_t b = a + 1; b < num_classes; ++b, ++pairs) {
      double d2 = 0;
      for (std::size_t i = 0; i < D; ++i) d2 += (templates[a][i] - templates[b][i]) * (templates[a][i] - templates[b][i]);
      mean_dist += std::sqrt(d2);
    }
  mean_dist /= static_cast<double>(pairs);
  const double kappa = separation * opts.noise / mean_dist;

  Dataset ds;
  ds.image_shape = shape;
  ds.num_classes = num_classes;
  ds.split = opts.split;
  ds.labels.reserve(num_classes * n_per_class);
  ds.images.reserve(num_classes * n_per_class * D);
  Rng srng(derive_seed(seed, "synth/samples/" + opts.split));
  const auto [C, H, W] = shape;
  const long s = static_cast<long>(opts.max_shift);
  std::uniform_int_distribution<long> shift(-s, s);
  std::uniform_real_distribution<double> gain(1.0 - opts.contrast_jitter, 1.0 + opts.contrast_jitter);
  for (std::size_t i = 0; i < n_per_class; ++i)
    for (std::size_t c = 0; c < num_classes; ++c) {
      ds.labels.push_back(static_cast<int>(c));
      const long dy = s > 0 ? shift(srng) : 0, dx = s > 0 ? shift(srng) : 0;
      const double g = opts.contrast_jitter > 0 ? gain(srng) : 1.0;
      for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t x = 0; x < W; ++x) {
            const auto sy = static_cast<std::size_t>(((static_cast<long>(y) + dy) % static_cast<long>(H) + static_cast<long>(H)) % static_cast<long>(H));
            const auto sx = static_cast<std::size_t>(((static_cast<long>(x) + dx) % static_cast<long>(W) + static_cast<long>(W)) % static_cast<long>(W));
            const double v = 0.5 + g * kappa * templates[c][(ch * H + sy) * W + sx] + opts.noise * normal(srng);
            ds.images.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
          }
    }
  return ds;
}

Dataset downsample2x(const Dataset& data) {
  const auto [C, H, W] = data.image_shape;
  if (H < 2 || W < 2) throw ShapeError("downsample2x: image too small");
  Dataset out;
  out.image_shape = {C, H / 2, W / 2};
  out.num_classes = data.num_classes;
  out.labels = data.labels;
  out.split = data.split;
  out.images.reserve(data.size() * out.image_size());
  for (std::size_t n = 0; n < data.size(); ++n) {
    auto img = data.image(n);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H / 2; ++y)
        for (std::size_t x = 0; x < W / 2; ++x) {
          const auto at = [&](std::size_t yy, std::size_t xx) { return img[(c * H + yy) * W + xx]; };
          out.images.push_back(0.25f * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) +
                                        at(2 * y + 1, 2 * x + 1)));
        }
  }
  return out;
}

}  // namespace dq
