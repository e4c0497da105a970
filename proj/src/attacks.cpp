#include "dq/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dq/rng.hpp"

namespace dq {

namespace {

float sign(float g) { return static_cast<float>((g > 0.0f) - (g < 0.0f)); }

// Projects onto the eps-ball around the clean pixel, then onto [0,1].
float project(float v, float clean, float eps) {
  return std::clamp(std::clamp(v, clean - eps, clean + eps), 0.0f, 1.0f);
}

// One signed-gradient step of size `step` from `from`, projected around `clean`.
Tensor<float> signed_step(const Classifier& model, const Tensor<float>& from, const Tensor<float>& clean,
                          std::span<const int> y, float step, float eps) {
  const auto g = input_gradient(model, from, y);
  Tensor<float> out(from.shape());
  auto o = out.mutable_data();
  auto f = from.data();
  auto c = clean.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = project(f[i] + step * sign(g[i]), c[i], eps);
  return out;
}

}  // namespace

const char* to_string(AttackKind k) {
  switch (k) {
    case AttackKind::random: return "random";
    case AttackKind::fgsm: return "fgsm";
    case AttackKind::rfgsm: return "rfgsm";
    case AttackKind::bim: return "bim";
    case AttackKind::pgd: return "pgd";
  }
  return "?";
}

AttackKind parse_attack_kind(const std::string& s) {
  if (s == "random") return AttackKind::random;
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "rfgsm" || s == "r+fgsm") return AttackKind::rfgsm;
  if (s == "bim") return AttackKind::bim;
  if (s == "pgd") return AttackKind::pgd;
  throw std::invalid_argument("unknown attack '" + s + "'");
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0 && epsilon <= 255)) throw std::invalid_argument("attack.eps must be in [0,255]");
  if (!(alpha > 0)) throw std::invalid_argument("attack.alpha must be positive");
  if (iters && *iters < 0) throw std::invalid_argument("attack.iters must be non-negative");
}

int AttackConfig::resolved_iters() const { return iters ? *iters : pgd_schedule(epsilon); }

int pgd_schedule(double eps_255) {
  if (eps_255 < 0) throw std::invalid_argument("pgd_schedule: negative budget");
  return static_cast<int>(std::floor(std::min(eps_255 + 4.0, 1.25 * eps_255)));
}

std::vector<float> input_gradient(const Classifier& model, const Tensor<float>& x, std::span<const int> labels) {
  Tape<float> tape;
  Tensor<float> xin = x.clone(true);
  Tensor<float> loss = cross_entropy(tape, model.logits(tape, xin), labels);
  tape.backward(loss);
  auto g = xin.grad();
  return std::vector<float>(g.begin(), g.end());
}

Tensor<float> random_attack(const Tensor<float>& x, const AttackConfig& cfg, std::uint64_t stream) {
  const float eps = static_cast<float>(scale_eps(cfg.epsilon));
  Rng rng(derive_seed(cfg.seed, "attack/random", stream));
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  Tensor<float> out(x.shape());
  auto o = out.mutable_data();
  auto c = x.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = project(c[i] + eps * (2.0f * unit(rng) - 1.0f), c[i], eps);
  return out;
}

Tensor<float> fgsm(const Classifier& model, const Tensor<float>& x, std::span<const int> y, const AttackConfig& cfg) {
  const float eps = static_cast<float>(scale_eps(cfg.epsilon));
  return signed_step(model, x, x, y, eps, eps);
}

Tensor<float> r_fgsm(const Classifier& model, const Tensor<float>& x, std::span<const int> y, const AttackConfig& cfg,
                     std::uint64_t stream) {
  const float eps = static_cast<float>(scale_eps(cfg.epsilon));
  const float eps1 = static_cast<float>(scale_eps(cfg.epsilon / 2.0));
  Rng rng(derive_seed(cfg.seed, "attack/rfgsm", stream));
  std::normal_distribution<float> normal(0.0f, 1.0f);
  Tensor<float> start(x.shape());
  auto s = start.mutable_data();
  auto c = x.data();
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = project(c[i] + eps1 * sign(normal(rng)), c[i], eps);
  return signed_step(model, start, x, y, eps - eps1, eps);
}

Tensor<float> bim(const Classifier& model, const Tensor<float>& x, std::span<const int> y, const AttackConfig& cfg,
                  const Tensor<float>* start, const std::function<void(const Tensor<float>&)>& on_iterate) {
  const float eps = static_cast<float>(scale_eps(cfg.epsilon));
  const float step = static_cast<float>(scale_eps(cfg.alpha));
  Tensor<float> cur = start ? start->clone() : x.clone();
  const int n = cfg.resolved_iters();
  for (int it = 0; it < n; ++it) {
    cur = signed_step(model, cur, x, y, step, eps);
    if (on_iterate) on_iterate(cur);
  }
  return cur;
}

Tensor<float> pgd(const Classifier& model, const Tensor<float>& x, std::span<const int> y, const AttackConfig& cfg,
                  std::uint64_t stream) {
  AttackConfig start_cfg = cfg;
  start_cfg.seed = derive_seed(cfg.seed, "attack/pgd-start");
  const Tensor<float> start = random_attack(x, start_cfg, stream);
  return bim(model, x, y, cfg, &start);
}

Tensor<float> run_attack(const Classifier& model, const Tensor<float>& x, std::span<const int> y,
                         const AttackConfig& cfg, std::uint64_t stream) {
  cfg.validate();
  switch (cfg.kind) {
    case AttackKind::random: return random_attack(x, cfg, stream);
    case AttackKind::fgsm: return fgsm(model, x, y, cfg);
    case AttackKind::rfgsm: return r_fgsm(model, x, y, cfg, stream);
    case AttackKind::bim: return bim(model, x, y, cfg);
    case AttackKind::pgd: return pgd(model, x, y, cfg, stream);
  }
  throw std::logic_error("unreachable attack kind");
}

}  // namespace dq
