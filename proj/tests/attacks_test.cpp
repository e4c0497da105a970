#include <gtest/gtest.h>

#include <cmath>

#include "dq/analysis.hpp"
#include "dq/attacks.hpp"
#include "dq/train.hpp"
#include "support/fixtures.hpp"

namespace dq {
namespace {

using testing::LinearClassifier;

constexpr ImageShape kShape{3, 8, 8};

AttackConfig make(AttackKind kind, double eps, std::uint64_t seed = 1) {
  AttackConfig c;
  c.kind = kind;
  c.epsilon = eps;
  c.seed = seed;
  return c;
}

bool same(const Tensor<float>& a, const Tensor<float>& b) {
  return std::equal(a.data().begin(), a.data().end(), b.data().begin(), b.data().end());
}

TEST(ScaleEps, Examples) {
  EXPECT_DOUBLE_EQ(scale_eps(8), 8.0 / 255.0);
  EXPECT_EQ(scale_eps(0), 0.0);
  EXPECT_EQ(scale_eps(255), 1.0);
}

TEST(PgdSchedule, Examples) {
  EXPECT_EQ(pgd_schedule(8), 10);
  EXPECT_EQ(pgd_schedule(2), 2);
  EXPECT_EQ(pgd_schedule(16), 20);
  EXPECT_EQ(pgd_schedule(0), 0);
  for (int e = 1; e <= 16; ++e) EXPECT_EQ(pgd_schedule(e), static_cast<int>(std::floor(std::min(e + 4.0, 1.25 * e))));
}

TEST(Fgsm, LinearModelClosedFormGradient) {
  const LinearClassifier model(kShape, 3, 21);
  const auto x = testing::uniform_images(4, kShape, 22, 0.2f, 0.8f);
  const std::vector<int> y{0, 1, 2, 0};
  const auto xa = fgsm(model, x, y, make(AttackKind::fgsm, 8));
  const std::size_t d = 3 * 8 * 8;
  const float eps = static_cast<float>(8.0 / 255.0);
  for (std::size_t n = 0; n < 4; ++n) {
    // dCE/dx = W^T (softmax(Wx + b) - onehot(y)), computed in double.
    std::vector<double> z(3);
    for (std::size_t k = 0; k < 3; ++k) {
      z[k] = model.bias()[k];
      for (std::size_t i = 0; i < d; ++i) z[k] += double(model.weight()[k * d + i]) * x[n * d + i];
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double den = 0;
    for (double& v : z) den += (v = std::exp(v - mx));
    for (std::size_t i = 0; i < d; ++i) {
      double g = 0;
      for (std::size_t k = 0; k < 3; ++k) g += model.weight()[k * d + i] * (z[k] / den - (int(k) == y[n] ? 1 : 0));
      const float expected = std::clamp(x[n * d + i] + eps * float((g > 0) - (g < 0)), 0.0f, 1.0f);
      ASSERT_EQ(xa[n * d + i], expected);
    }
  }
}

TEST(Attacks, ZeroBudgetIsIdentity) {
  const LinearClassifier model(kShape, 3, 23);
  const auto x = testing::uniform_images(5, kShape, 24);
  const auto y = testing::cyclic_labels(5, 3);
  for (auto kind : {AttackKind::random, AttackKind::fgsm, AttackKind::rfgsm, AttackKind::bim, AttackKind::pgd})
    EXPECT_TRUE(same(run_attack(model, x, y, make(kind, 0)), x)) << to_string(kind);
}

TEST(Attacks, BallAndRangeInvariants) {
  const LinearClassifier model(kShape, 3, 25);
  const auto x = testing::uniform_images(300, kShape, 26);
  const auto y = testing::cyclic_labels(300, 3);
  for (auto kind : {AttackKind::random, AttackKind::fgsm, AttackKind::rfgsm, AttackKind::bim, AttackKind::pgd})
    for (double eps : {1.0, 8.0, 16.0}) {
      const auto xa = run_attack(model, x, y, make(kind, eps));
      const float bound = static_cast<float>(eps / 255.0 + 1e-7);
      for (std::size_t i = 0; i < x.numel(); ++i) {
        ASSERT_LE(std::abs(xa[i] - x[i]), bound) << to_string(kind);
        ASSERT_GE(xa[i], 0.0f);
        ASSERT_LE(xa[i], 1.0f);
      }
    }
}

TEST(Attacks, SeededAttacksAreDeterministic) {
  const LinearClassifier model(kShape, 3, 27);
  const auto x = testing::uniform_images(6, kShape, 28);
  const auto y = testing::cyclic_labels(6, 3);
  for (auto kind : {AttackKind::random, AttackKind::rfgsm, AttackKind::pgd}) {
    EXPECT_TRUE(same(run_attack(model, x, y, make(kind, 8, 5), 3), run_attack(model, x, y, make(kind, 8, 5), 3)));
    EXPECT_FALSE(same(run_attack(model, x, y, make(kind, 8, 5), 3), run_attack(model, x, y, make(kind, 8, 6), 3)));
  }
}

TEST(Attacks, InputIsNotMutated) {
  const LinearClassifier model(kShape, 3, 29);
  const auto x = testing::uniform_images(4, kShape, 30);
  const auto copy = x.clone();
  const auto y = testing::cyclic_labels(4, 3);
  for (auto kind : {AttackKind::random, AttackKind::fgsm, AttackKind::rfgsm, AttackKind::bim, AttackKind::pgd})
    run_attack(model, x, y, make(kind, 8));
  EXPECT_TRUE(same(x, copy));
}

TEST(Bim, OneStepWithAlphaEqualToEpsIsFgsm) {
  const LinearClassifier model(kShape, 3, 31);
  const auto x = testing::uniform_images(4, kShape, 32);
  const auto y = testing::cyclic_labels(4, 3);
  AttackConfig c = make(AttackKind::bim, 8);
  c.iters = 1;
  c.alpha = 8;
  EXPECT_TRUE(same(bim(model, x, y, c), fgsm(model, x, y, make(AttackKind::fgsm, 8))));
}

TEST(Bim, EveryIterateStaysInTheBall) {
  const LinearClassifier model(kShape, 3, 33);
  const auto x = testing::uniform_images(4, kShape, 34);
  const auto y = testing::cyclic_labels(4, 3);
  int seen = 0;
  bim(model, x, y, make(AttackKind::bim, 4), nullptr, [&](const Tensor<float>& it) {
    ++seen;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      ASSERT_LE(std::abs(it[i] - x[i]), float(4.0 / 255.0 + 1e-7));
      ASSERT_GE(it[i], 0.0f);
      ASSERT_LE(it[i], 1.0f);
    }
  });
  EXPECT_EQ(seen, pgd_schedule(4));
}

TEST(RFgsm, ConstantModelTakesOnlyTheRandomStep) {
  const testing::ConstantClassifier model(3);
  const auto x = testing::uniform_images(4, kShape, 35);
  const auto y = testing::cyclic_labels(4, 3);
  const auto xa = r_fgsm(model, x, y, make(AttackKind::rfgsm, 8));
  const float half = static_cast<float>(4.0 / 255.0);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const bool up = std::abs(xa[i] - std::min(x[i] + half, 1.0f)) < 1e-7f;
    const bool down = std::abs(xa[i] - std::max(x[i] - half, 0.0f)) < 1e-7f;
    ASSERT_TRUE(up || down) << i;
  }
}

TEST(Attacks, StrengthOrderingOnTrainedToyModel) {
  // clean >= Random >= FGSM >= iterative on a clean-trained model, averaged over seeds.
  double clean = 0, rnd = 0, fg = 0, bi = 0, pg = 0;
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  for (std::uint64_t seed : seeds) {
    SynthOptions so;
    so.noise = 0.15;
    const Dataset train_set = synth_blobs(4, 100, {3, 8, 8}, 6, seed, so);
    so.split = "test";
    const Dataset test_set = synth_blobs(4, 50, {3, 8, 8}, 6, seed, so);
    ModelSpec spec = testing::tiny_spec();
    spec.quant.mode = QuantMode::off;
    Model model(spec, seed);
    TrainConfig tc;
    tc.epochs = 8;
    tc.milestones = {6};
    tc.lr = 0.05;
    tc.batch_size = 32;
    tc.seed = seed;
    train(model, train_set, tc);
    clean += evaluate(model, test_set);
    rnd += evaluate(model, test_set, make(AttackKind::random, 8, seed));
    fg += evaluate(model, test_set, make(AttackKind::fgsm, 8));
    bi += evaluate(model, test_set, make(AttackKind::bim, 8));
    pg += evaluate(model, test_set, make(AttackKind::pgd, 8, seed));
  }
  const double k = static_cast<double>(seeds.size());
  EXPECT_GE((clean - rnd) / k, -1.0);
  EXPECT_GE((rnd - fg) / k, -1.0);
  // PGD at alpha=1 starts uniformly in the ball and cannot always reach a corner
  // in pgd_schedule(8) steps, so the iterative bound is taken over BIM and PGD together.
  EXPECT_GE((fg - bi) / k, -1.0);
  EXPECT_GE((fg - std::min(bi, pg)) / k, -1.0);
  EXPECT_LT(fg, clean);
}

TEST(AttackConfig, Validation) {
  EXPECT_THROW(make(AttackKind::fgsm, -1).validate(), std::invalid_argument);
  EXPECT_THROW(make(AttackKind::fgsm, 256).validate(), std::invalid_argument);
  EXPECT_THROW(parse_attack_kind("cw"), std::invalid_argument);
  EXPECT_EQ(parse_attack_kind("pgd"), AttackKind::pgd);
}

}  // namespace
}  // namespace dq
