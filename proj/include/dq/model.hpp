#pragma once

// Quantized convolutional classifiers built from a declarative spec.
//
// Each block is conv -> batchnorm -> [residual junction] -> quantized
// activation; a dense head follows the last block. A residual block mixes its
// normalized conv output with the block input before the activation, either as
// a convex combination (trainable alpha in [0,1]) or as a plain sum.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dq/checkpoint.hpp"
#include "dq/lipschitz.hpp"
#include "dq/ops.hpp"
#include "dq/quant.hpp"

namespace dq {

using ImageShape = std::array<std::size_t, 3>;  // C, H, W

struct BlockSpec {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::optional<std::size_t> pad;  // defaults to kernel / 2
  bool residual = false;
  std::optional<int> bits;  // per-block override of quant.bits

  std::size_t padding() const { return pad.value_or(kernel / 2); }
  bool operator==(const BlockSpec&) const = default;
};

// "16:3:2" is 16 channels, 3x3 kernel, stride 2. Optional suffixes:
// ":r" residual junction, ":p<n>" explicit padding, ":b<k>" bit override.
std::vector<BlockSpec> parse_blocks(const std::string& text);
std::string format_blocks(const std::vector<BlockSpec>& blocks);

struct ModelSpec {
  ImageShape input{3, 32, 32};
  std::size_t num_classes = 10;
  std::vector<BlockSpec> blocks;
  QuantConfig quant;
  RegConfig reg;

  // Throws ShapeError naming the first block whose shapes do not compose.
  void validate() const;
  std::vector<ImageShape> block_output_shapes() const;
  QuantConfig block_quant(std::size_t block) const;

  // 4-block CNN with one residual junction on the third block.
  static ModelSpec desk_default(ImageShape input = {3, 32, 32}, std::size_t num_classes = 10);
};

// Anything that maps an image batch to logits differentiably. Attacks only
// ever see this interface and never train through it.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual Tensor<float> logits(Tape<float>& tape, const Tensor<float>& x) const = 0;
  virtual ImageShape input_shape() const = 0;
  virtual std::size_t num_classes() const = 0;
};

struct ForwardOptions {
  Mode mode = Mode::eval;
  bool quantize = true;
  bool track_params = true;
  std::vector<Tensor<float>>* activations = nullptr;  // one entry per block
};

class Model : public Classifier {
 public:
  // Deterministic He fan-in initialization from seed.
  Model(ModelSpec spec, std::uint64_t seed);

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  Model clone() const;

  const ModelSpec& spec() const noexcept { return spec_; }
  ImageShape input_shape() const override { return spec_.input; }
  std::size_t num_classes() const override { return spec_.num_classes; }

  Tensor<float> forward(Tape<float>& tape, const Tensor<float>& x, const ForwardOptions& opts);
  // Eval mode, parameters frozen, quantization as configured.
  Tensor<float> logits(Tape<float>& tape, const Tensor<float>& x) const override;
  // Post-activation feature map of every block, eval mode.
  std::vector<Tensor<float>> block_activations(const Tensor<float>& x, bool quantize) const;

  std::vector<std::string> layer_names() const;
  std::vector<Tensor<float>> parameters();
  std::vector<NamedTensor> named_parameters() const;
  std::size_t parameter_count() const;
  // Weight matrices eligible for the orthogonality penalty, by layer name.
  std::vector<NamedWeight<float>> regularized_weights() const;
  void project_coefficients();

  // Parameters plus batchnorm running statistics.
  std::vector<NamedTensor> state() const;
  // Strict: every name and shape must match this model's state.
  void load_state(const std::vector<NamedTensor>& state);

  // Replaces the quantizer (used to evaluate one set of weights at several
  // precisions).
  void set_quant(const QuantConfig& q) { spec_.quant = q; }

 private:
  struct Block {
    Tensor<float> weight;
    Tensor<float> gamma;
    Tensor<float> beta;
    std::optional<Tensor<float>> alpha;
    BatchNormState<float> bn;
  };

  Model() = default;
  Tensor<float> run(Tape<float>& tape, const Tensor<float>& x, const ForwardOptions& opts, bool update_stats) const;

  ModelSpec spec_;
  // Running statistics move only in train mode.
  mutable std::vector<Block> blocks_;
  Tensor<float> head_w_;
  Tensor<float> head_b_;
};

inline Model build_model(const ModelSpec& spec, std::uint64_t seed) { return Model(spec, seed); }

// Argmax class per sample.
std::vector<int> predict(const Classifier& model, const Tensor<float>& x);

}  // namespace dq
