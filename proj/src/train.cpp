#include "dq/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dq/error.hpp"
#include "dq/rng.hpp"

namespace dq {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs", "must be >= 1");
  if (!(lr > 0)) throw ConfigError("train.lr", "must be positive");
  if (!(decay > 0)) throw ConfigError("train.decay", "must be positive");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train.momentum", "must be in [0,1)");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  for (std::size_t i = 0; i < milestones.size(); ++i) {
    if (i > 0 && milestones[i] <= milestones[i - 1]) throw ConfigError("train.milestones", "must be strictly increasing");
    if (milestones[i] < 1 || milestones[i] >= epochs)
      throw ConfigError("train.milestones", "must lie in [1, epochs)");
  }
}

double learning_rate_at(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr;
  for (int m : cfg.milestones)
    if (epoch >= m) lr *= cfg.decay;
  return lr;
}

namespace {

void augment_batch(Tensor<float>& x, Rng& rng) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  std::uniform_int_distribution<int> shift(-2, 2);
  std::bernoulli_distribution flip(0.5);
  auto d = x.mutable_data();
  std::vector<float> img(C * H * W);
  for (std::size_t n = 0; n < N; ++n) {
    float* src = d.data() + n * C * H * W;
    std::copy(src, src + img.size(), img.begin());
    const int dy = shift(rng), dx = shift(rng);
    const bool f = flip(rng);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const long sy = static_cast<long>(y) + dy;
          const long sx0 = static_cast<long>(f ? W - 1 - xx : xx) + dx;
          src[(c * H + y) * W + xx] = (sy < 0 || sx0 < 0 || sy >= static_cast<long>(H) || sx0 >= static_cast<long>(W))
                                          ? 0.0f
                                          : img[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx0)];
        }
  }
}

}  // namespace

Trainer::Trainer(Model& model, TrainConfig cfg)
    : model_(model), cfg_(std::move(cfg)), params_(model.parameters()), opt_(static_cast<float>(cfg_.momentum)) {
  cfg_.validate();
}

EpochStats Trainer::run_epoch(const Dataset& data, int epoch, const AdvTrainConfig* adv) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (adv) adv->validate();
  const double lr = learning_rate_at(cfg_, epoch);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(cfg_.seed, "train/shuffle", static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  Rng aug_rng(derive_seed(cfg_.seed, "train/augment", static_cast<std::uint64_t>(epoch)));

  const auto weights = model_.regularized_weights();
  double loss_sum = 0;
  std::size_t correct = 0, seen = 0, batches = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size, ++batches) {
    const std::size_t count = std::min(cfg_.batch_size, order.size() - begin);
    std::span<const std::size_t> idx(order.data() + begin, count);
    Tensor<float> x = data.batch_images(idx);
    const std::vector<int> y = data.batch_labels(idx);
    if (cfg_.augment) augment_batch(x, aug_rng);

    if (adv && adv->mix > 0) {
      const std::uint64_t stream = static_cast<std::uint64_t>(epoch) * 1000003ULL + batches;
      Rng eps_rng(derive_seed(cfg_.seed, "advtrain/eps", stream));
      AttackConfig atk;
      atk.kind = adv->method == AdvMethod::rfgsm ? AttackKind::rfgsm : AttackKind::pgd;
      atk.epsilon = sample_epsilon(adv->delta, eps_rng);
      atk.alpha = 1.0;
      atk.seed = derive_seed(cfg_.seed, "advtrain/attack", stream);
      const std::size_t n_adv = static_cast<std::size_t>(std::lround(adv->mix * static_cast<double>(count)));
      if (n_adv > 0) {
        const std::size_t d = data.image_size();
        std::vector<float> head(x.data().begin(), x.data().begin() + static_cast<std::ptrdiff_t>(n_adv * d));
        Tensor<float> xa(Shape{n_adv, x.dim(1), x.dim(2), x.dim(3)}, std::move(head));
        const std::span<const int> ya(y.data(), n_adv);
        const Tensor<float> crafted = run_attack(model_, xa, ya, atk);
        std::copy(crafted.data().begin(), crafted.data().end(), x.mutable_data().begin());
      }
    }

    Tape<float> tape;
    ForwardOptions opts;
    opts.mode = Mode::train;
    const Tensor<float> z = model_.forward(tape, x, opts);
    const Tensor<float> ce = cross_entropy(tape, z, y);
    Tensor<float> loss = total_loss(tape, ce, weights, model_.spec().reg);
    const double lv = loss.item();
    if (!std::isfinite(lv))
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(batches));
    tape.backward(loss);
    opt_.step(params_, static_cast<float>(lr));
    SgdMomentum<float>::zero_grad(params_);
    model_.project_coefficients();

    loss_sum += lv;
    const std::size_t C = z.dim(1);
    auto zv = z.data();
    for (std::size_t n = 0; n < count; ++n) {
      const float* row = zv.data() + n * C;
      if (static_cast<int>(std::max_element(row, row + C) - row) == y[n]) ++correct;
    }
    seen += count;
  }
  return EpochStats{epoch, lr, loss_sum / static_cast<double>(batches),
                    100.0 * static_cast<double>(correct) / static_cast<double>(seen)};
}

EpochStats adv_train_epoch(Trainer& trainer, const Dataset& data, int epoch, const AdvTrainConfig& adv) {
  return trainer.run_epoch(data, epoch, &adv);
}

TrainResult train(Model& model, const Dataset& data, const TrainConfig& cfg, const AdvTrainConfig* adv,
                  const EpochHook& on_milestone) {
  Trainer trainer(model, cfg);
  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    result.curve.push_back(trainer.run_epoch(data, epoch, adv));
    const bool milestone = std::find(cfg.milestones.begin(), cfg.milestones.end(), epoch + 1) != cfg.milestones.end();
    if (on_milestone && (milestone || epoch + 1 == cfg.epochs)) on_milestone(result.curve.back(), model);
  }
  return result;
}

double transfer_attack(const Classifier& source, const Classifier& target, const Dataset& data,
                       const AttackConfig& atk, std::size_t batch_size) {
  if (source.input_shape() != target.input_shape()) throw ShapeError("transfer_attack: input shapes differ");
  if (data.empty()) throw std::invalid_argument("transfer_attack: empty dataset");
  std::size_t correct = 0;
  for (std::size_t begin = 0, b = 0; begin < data.size(); begin += batch_size, ++b) {
    const std::size_t count = std::min(batch_size, data.size() - begin);
    const Tensor<float> x = data.range_images(begin, count);
    const std::vector<int> y = data.range_labels(begin, count);
    const Tensor<float> xa = run_attack(source, x, y, atk, b);
    const auto pred = predict(target, xa);
    for (std::size_t i = 0; i < count; ++i) correct += pred[i] == y[i];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace dq
