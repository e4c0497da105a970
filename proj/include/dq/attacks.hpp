#pragma once

// L-infinity attacks. Budgets are given in 0-255 pixel units and applied to
// inputs scaled to [0,1]. Every output lies in the eps-ball of the clean
// input and in [0,1]. sign(0) is 0.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dq/model.hpp"

namespace dq {

enum class AttackKind { random, fgsm, rfgsm, bim, pgd };

const char* to_string(AttackKind k);
AttackKind parse_attack_kind(const std::string& s);

struct AttackConfig {
  AttackKind kind = AttackKind::fgsm;
  double epsilon = 8.0;       // 0-255 units
  double alpha = 1.0;         // BIM/PGD step, 0-255 units
  std::optional<int> iters;   // overrides the BIM/PGD schedule
  std::uint64_t seed = 0;

  void validate() const;
  // Iteration count for the iterative attacks.
  int resolved_iters() const;
};

inline double scale_eps(double eps_255) { return eps_255 / 255.0; }

// floor(min(eps + 4, 1.25 eps)); 0 for a zero budget.
int pgd_schedule(double eps_255);

// d mean-CE / d x for the batch.
std::vector<float> input_gradient(const Classifier& model, const Tensor<float>& x, std::span<const int> labels);

Tensor<float> random_attack(const Tensor<float>& x, const AttackConfig& cfg, std::uint64_t stream = 0);
Tensor<float> fgsm(const Classifier& model, const Tensor<float>& x, std::span<const int> y, const AttackConfig& cfg);
Tensor<float> r_fgsm(const Classifier& model, const Tensor<float>& x, std::span<const int> y, const AttackConfig& cfg,
                     std::uint64_t stream = 0);
// `start` replaces x as the first iterate (PGD's random start); projection is
// always onto the ball around x. `on_iterate` sees every iterate.
Tensor<float> bim(const Classifier& model, const Tensor<float>& x, std::span<const int> y, const AttackConfig& cfg,
                  const Tensor<float>* start = nullptr,
                  const std::function<void(const Tensor<float>&)>& on_iterate = {});
Tensor<float> pgd(const Classifier& model, const Tensor<float>& x, std::span<const int> y, const AttackConfig& cfg,
                  std::uint64_t stream = 0);

// Dispatch on cfg.kind. `stream` distinguishes batches under one seed.
Tensor<float> run_attack(const Classifier& model, const Tensor<float>& x, std::span<const int> y,
                         const AttackConfig& cfg, std::uint64_t stream = 0);

}  // namespace dq
