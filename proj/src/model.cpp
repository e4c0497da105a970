#include "dq/model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "dq/error.hpp"
#include "dq/rng.hpp"

namespace dq {

namespace {

std::size_t parse_size(const std::string& tok, const std::string& block) {
  try {
    std::size_t used = 0;
    const auto v = std::stoul(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument("malformed block '" + block + "'");
  }
}

void fill_he(Tensor<float>& t, std::size_t fan_in, Rng& rng) {
  std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
  for (auto& v : t.mutable_data()) v = dist(rng);
}

}  // namespace

std::vector<BlockSpec> parse_blocks(const std::string& text) {
  std::vector<BlockSpec> out;
  std::stringstream ss(text);
  std::string block;
  while (std::getline(ss, block, ',')) {
    if (block.empty()) continue;
    std::vector<std::string> toks;
    std::stringstream bs(block);
    std::string tok;
    while (std::getline(bs, tok, ':')) toks.push_back(tok);
    if (toks.size() < 3) throw std::invalid_argument("malformed block '" + block + "'");
    BlockSpec b;
    b.out_channels = parse_size(toks[0], block);
    b.kernel = parse_size(toks[1], block);
    b.stride = parse_size(toks[2], block);
    for (std::size_t i = 3; i < toks.size(); ++i) {
      const auto& t = toks[i];
      if (t == "r") {
        b.residual = true;
      } else if (t.size() > 1 && t[0] == 'p') {
        b.pad = parse_size(t.substr(1), block);
      } else if (t.size() > 1 && t[0] == 'b') {
        b.bits = static_cast<int>(parse_size(t.substr(1), block));
      } else {
        throw std::invalid_argument("unknown block option '" + t + "' in '" + block + "'");
      }
    }
    out.push_back(b);
  }
  return out;
}

std::string format_blocks(const std::vector<BlockSpec>& blocks) {
  std::ostringstream os;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (i) os << ',';
    os << b.out_channels << ':' << b.kernel << ':' << b.stride;
    if (b.pad) os << ":p" << *b.pad;
    if (b.residual) os << ":r";
    if (b.bits) os << ":b" << *b.bits;
  }
  return os.str();
}

std::vector<ImageShape> ModelSpec::block_output_shapes() const {
  std::vector<ImageShape> shapes;
  ImageShape cur = input;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string where = "block " + std::to_string(i) + ": ";
    if (b.out_channels == 0 || b.kernel == 0 || b.stride == 0)
      throw ShapeError(where + "channels, kernel and stride must be positive");
    const std::size_t p = b.padding();
    if (b.kernel > cur[1] + 2 * p || b.kernel > cur[2] + 2 * p)
      throw ShapeError(where + "kernel " + std::to_string(b.kernel) + " exceeds padded input " +
                       std::to_string(cur[1]) + "x" + std::to_string(cur[2]));
    ImageShape next{b.out_channels, (cur[1] + 2 * p - b.kernel) / b.stride + 1,
                    (cur[2] + 2 * p - b.kernel) / b.stride + 1};
    if (b.residual && next != cur)
      throw ShapeError(where + "residual junction needs matching shapes, input " + std::to_string(cur[0]) + "x" +
                       std::to_string(cur[1]) + "x" + std::to_string(cur[2]) + " vs output " +
                       std::to_string(next[0]) + "x" + std::to_string(next[1]) + "x" + std::to_string(next[2]));
    if (b.bits && (*b.bits < 1 || *b.bits > 8)) throw ShapeError(where + "bit override must be in [1,8]");
    shapes.push_back(next);
    cur = next;
  }
  return shapes;
}

void ModelSpec::validate() const {
  if (input[0] == 0 || input[1] == 0 || input[2] == 0) throw ShapeError("input shape must be positive");
  if (num_classes < 2) throw ShapeError("need at least two classes");
  quant.validate();
  reg.validate();
  block_output_shapes();
}

QuantConfig ModelSpec::block_quant(std::size_t block) const {
  QuantConfig q = quant;
  if (blocks.at(block).bits) q.bits = *blocks[block].bits;
  return q;
}

ModelSpec ModelSpec::desk_default(ImageShape input, std::size_t num_classes) {
  ModelSpec s;
  s.input = input;
  s.num_classes = num_classes;
  s.blocks = parse_blocks("8:3:1,16:3:2,16:3:1:r,32:3:2");
  return s;
}

Model::Model(ModelSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  spec_.validate();
  Rng rng(derive_seed(seed, "model/init"));
  std::size_t cin = spec_.input[0];
  const auto shapes = spec_.block_output_shapes();
  for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
    const auto& b = spec_.blocks[i];
    Block blk{Tensor<float>(Shape{b.out_channels, cin, b.kernel, b.kernel}, true),
              Tensor<float>(Shape{b.out_channels}, std::vector<float>(b.out_channels, 1.0f), true),
              Tensor<float>(Shape{b.out_channels}, true), std::nullopt, BatchNormState<float>(b.out_channels)};
    fill_he(blk.weight, cin * b.kernel * b.kernel, rng);
    if (b.residual && spec_.reg.aggregation == Aggregation::convex)
      blk.alpha = Tensor<float>::scalar(0.5f, true);
    blocks_.push_back(std::move(blk));
    cin = b.out_channels;
  }
  const ImageShape last = shapes.empty() ? spec_.input : shapes.back();
  const std::size_t features = last[0] * last[1] * last[2];
  head_w_ = Tensor<float>(Shape{spec_.num_classes, features}, true);
  head_b_ = Tensor<float>(Shape{spec_.num_classes}, true);
  fill_he(head_w_, features, rng);
}

Model Model::clone() const {
  Model m;
  m.spec_ = spec_;
  for (const auto& b : blocks_) {
    Block c{b.weight.clone(true), b.gamma.clone(true), b.beta.clone(true), std::nullopt, b.bn};
    if (b.alpha) c.alpha = b.alpha->clone(true);
    c.bn.running_mean = b.bn.running_mean.clone();
    c.bn.running_var = b.bn.running_var.clone();
    m.blocks_.push_back(std::move(c));
  }
  m.head_w_ = head_w_.clone(true);
  m.head_b_ = head_b_.clone(true);
  return m;
}

Tensor<float> Model::run(Tape<float>& tape, const Tensor<float>& x, const ForwardOptions& opts,
                         bool update_stats) const {
  if (x.rank() != 4 || x.dim(1) != spec_.input[0] || x.dim(2) != spec_.input[1] || x.dim(3) != spec_.input[2])
    throw ShapeError("model expects [N," + std::to_string(spec_.input[0]) + "," + std::to_string(spec_.input[1]) +
                     "," + std::to_string(spec_.input[2]) + "] input, got " + to_string(x.shape()));
  auto param = [&](const Tensor<float>& t) { return opts.track_params ? t : t.detach(); };
  const Mode bn_mode = update_stats ? Mode::train : Mode::eval;
  Tensor<float> h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const auto& spec = spec_.blocks[i];
    auto& blk = blocks_[i];
    Tensor<float> z = conv2d(tape, h, param(blk.weight), spec.stride, spec.padding());
    z = batchnorm(tape, z, param(blk.gamma), param(blk.beta), blk.bn, bn_mode);
    if (spec.residual) {
      z = blk.alpha ? convex_aggregate(tape, z, h, param(*blk.alpha)) : add(tape, z, h);
    }
    h = quantized_activation(tape, z, spec_.block_quant(i), opts.quantize);
    if (opts.activations) opts.activations->push_back(h);
  }
  return dense(tape, flatten(tape, h), param(head_w_), param(head_b_));
}

Tensor<float> Model::forward(Tape<float>& tape, const Tensor<float>& x, const ForwardOptions& opts) {
  return run(tape, x, opts, opts.mode == Mode::train);
}

Tensor<float> Model::logits(Tape<float>& tape, const Tensor<float>& x) const {
  ForwardOptions opts;
  opts.track_params = false;
  return run(tape, x, opts, false);
}

std::vector<Tensor<float>> Model::block_activations(const Tensor<float>& x, bool quantize) const {
  Tape<float> tape;
  std::vector<Tensor<float>> acts;
  ForwardOptions opts;
  opts.quantize = quantize;
  opts.track_params = false;
  opts.activations = &acts;
  run(tape, x.detach(), opts, false);
  return acts;
}

std::vector<std::string> Model::layer_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < blocks_.size(); ++i) names.push_back("block" + std::to_string(i));
  return names;
}

std::vector<NamedTensor> Model::named_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    out.push_back({p + ".conv.weight", blocks_[i].weight});
    out.push_back({p + ".bn.gamma", blocks_[i].gamma});
    out.push_back({p + ".bn.beta", blocks_[i].beta});
    if (blocks_[i].alpha) out.push_back({p + ".alpha", *blocks_[i].alpha});
  }
  out.push_back({"head.weight", head_w_});
  out.push_back({"head.bias", head_b_});
  return out;
}

std::vector<Tensor<float>> Model::parameters() {
  std::vector<Tensor<float>> out;
  for (auto& nt : named_parameters()) out.push_back(nt.tensor);
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& nt : named_parameters()) n += nt.tensor.numel();
  return n;
}

std::vector<NamedWeight<float>> Model::regularized_weights() const {
  std::vector<NamedWeight<float>> out;
  for (std::size_t i = 0; i < blocks_.size(); ++i) out.push_back({"block" + std::to_string(i) + ".conv", blocks_[i].weight});
  out.push_back({"head", head_w_});
  return out;
}

void Model::project_coefficients() {
  for (auto& b : blocks_)
    if (b.alpha) project_coeff(*b.alpha);
}

std::vector<NamedTensor> Model::state() const {
  auto out = named_parameters();
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    out.push_back({p + ".bn.running_mean", blocks_[i].bn.running_mean});
    out.push_back({p + ".bn.running_var", blocks_[i].bn.running_var});
  }
  return out;
}

void Model::load_state(const std::vector<NamedTensor>& incoming) {
  auto mine = state();
  if (incoming.size() != mine.size())
    throw ShapeError("checkpoint has " + std::to_string(incoming.size()) + " tensors, model expects " +
                     std::to_string(mine.size()));
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& nt : incoming) by_name[nt.name] = &nt.tensor;
  for (auto& nt : mine) {
    auto it = by_name.find(nt.name);
    if (it == by_name.end()) throw ShapeError("checkpoint is missing tensor '" + nt.name + "'");
    if (it->second->shape() != nt.tensor.shape())
      throw ShapeError("checkpoint tensor '" + nt.name + "' has shape " + to_string(it->second->shape()) +
                       ", model expects " + to_string(nt.tensor.shape()));
  }
  for (auto& nt : mine) {
    auto src = by_name[nt.name]->data();
    auto dst = nt.tensor.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

std::vector<int> predict(const Classifier& model, const Tensor<float>& x) {
  Tape<float> tape;
  const Tensor<float> z = model.logits(tape, x.detach());
  const std::size_t N = z.dim(0), C = z.dim(1);
  auto v = z.data();
  std::vector<int> out(N);
  for (std::size_t n = 0; n < N; ++n) {
    const float* row = v.data() + n * C;
    out[n] = static_cast<int>(std::max_element(row, row + C) - row);
  }
  return out;
}

}  // namespace dq
