#include <gtest/gtest.h>

#include <random>

#include "dq/quant.hpp"
#include "support/oracles.hpp"

namespace dq {
namespace {

QuantConfig uniform(int bits, double range = 6.0) {
  QuantConfig q;
  q.bits = bits;
  q.range_max = range;
  return q;
}

double q1(double x, int bits, double range = 6.0) {
  return quantize_uniform(Tensor<double>(Shape{1}, std::vector<double>{x}), uniform(bits, range))[0];
}

TEST(QuantizeUniform, Examples) {
  EXPECT_EQ(q1(3.2, 2), 4.0);
  EXPECT_EQ(q1(2.9, 1), 0.0);
  EXPECT_EQ(q1(3.0, 1), 6.0);
  for (int bits = 1; bits <= 8; ++bits) {
    EXPECT_EQ(q1(0.0, bits), 0.0);
    EXPECT_EQ(q1(6.0, bits), 6.0);
  }
}

TEST(QuantizeUniform, MatchesEnumerationOracleAndErrorBound) {
  std::mt19937_64 rng(11);
  for (int bits = 1; bits <= 8; ++bits) {
    std::uniform_real_distribution<double> u(0.0, 6.0);
    std::vector<double> xs(20000);
    for (auto& x : xs) x = u(rng);
    const auto q = quantize_uniform(Tensor<double>(Shape{xs.size()}, xs), uniform(bits));
    const double bound = 6.0 / (2.0 * ((1 << bits) - 1));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ASSERT_EQ(q[i], testing::nearest_level(xs[i], bits, 6.0)) << "bits " << bits << " x " << xs[i];
      ASSERT_LE(std::abs(q[i] - xs[i]), bound);
    }
  }
}

TEST(QuantizeUniform, IdempotentAndMonotone) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<float> u(0.0f, 6.0f);
  std::vector<float> xs(5000);
  for (auto& x : xs) x = u(rng);
  std::sort(xs.begin(), xs.end());
  for (int bits = 1; bits <= 8; ++bits) {
    const auto q = quantize_uniform(Tensor<float>(Shape{xs.size()}, xs), uniform(bits));
    const auto qq = quantize_uniform(q, uniform(bits));
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ASSERT_EQ(q[i], qq[i]);
      if (i) ASSERT_LE(q[i - 1], q[i]);
    }
  }
}

TEST(QuantizeUniform, SmallPerturbationsOfGridPointsAreRemoved) {
  std::mt19937_64 rng(13);
  for (int bits = 1; bits <= 6; ++bits) {
    const int n = (1 << bits) - 1;
    const double half = 6.0 / n / 2;
    std::uniform_real_distribution<double> d(-0.999 * half, 0.999 * half);
    for (int i = 0; i <= n; ++i) {
      const double level = grid_level(i, n, 6.0);
      for (int t = 0; t < 50; ++t) {
        const double x = std::clamp(level + d(rng), 0.0, 6.0);
        ASSERT_EQ(q1(x, bits), level);
      }
    }
  }
}

TEST(QuantizeUniform, RejectsUnclampedInput) {
  EXPECT_THROW(q1(-0.01, 3), std::domain_error);
  EXPECT_THROW(q1(6.01, 3), std::domain_error);
  EXPECT_NO_THROW(q1(6.0 + 5e-7, 3));
}

TEST(QuantConfig, Validation) {
  EXPECT_THROW(uniform(0).validate(), std::invalid_argument);
  EXPECT_THROW(uniform(9).validate(), std::invalid_argument);
  EXPECT_THROW(uniform(3, 0.0).validate(), std::invalid_argument);
}

TEST(QuantizedRelu6, ForwardExample) {
  Tape<double> tape;
  const auto y = quantized_relu6(tape, Tensor<double>(Shape{3}, {2.5, -1.0, 7.0}), uniform(3));
  EXPECT_DOUBLE_EQ(y[0], 18.0 / 7.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 6.0);
}

TEST(QuantizedRelu6, StraightThroughGradientEqualsClampGradient) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<float> u(-3.0f, 9.0f), g(-2.0f, 2.0f);
  std::vector<float> xs(4000), up(4000);
  for (auto& x : xs) x = u(rng);
  for (auto& v : up) v = g(rng);
  xs[0] = 0.0f;
  xs[1] = 6.0f;
  for (int bits = 1; bits <= 8; ++bits) {
    Tensor<float> a(Shape{xs.size()}, xs, true), b(Shape{xs.size()}, xs, true);
    const Tensor<float> w(Shape{xs.size()}, up);
    Tape<float> ta, tb;
    Tensor<float> la = sum(ta, mul(ta, quantized_relu6(ta, a, uniform(bits)), w));
    Tensor<float> lb = sum(tb, mul(tb, clamp(tb, b, 0.0f, 6.0f), w));
    ta.backward(la);
    tb.backward(lb);
    for (std::size_t i = 0; i < xs.size(); ++i) {
      ASSERT_EQ(a.grad()[i], b.grad()[i]) << "x " << xs[i];
      if (xs[i] <= 0.0f || xs[i] >= 6.0f) {
        ASSERT_EQ(a.grad()[i], 0.0f);
      } else {
        ASSERT_EQ(a.grad()[i], up[i]);
      }
    }
  }
}

TEST(QuantizeTanh, ZeroMapsToTopLevelAtOneBit) {
  QuantConfig q = uniform(1, 1.0);
  q.mode = QuantMode::tanh;
  Tape<double> tape;
  EXPECT_EQ(quantize_tanh(tape, Tensor<double>(Shape{1}, std::vector<double>{0.0}), q)[0], 1.0);
}

TEST(QuantizeTanh, GradientIsSechSquared) {
  QuantConfig q = uniform(3, 1.0);
  q.mode = QuantMode::tanh;
  const std::vector<double> xs{-2.0, -0.3, 0.0, 0.8, 1.7};
  Tensor<double> x(Shape{xs.size()}, xs, true);
  Tape<double> tape;
  Tensor<double> loss = sum(tape, quantize_tanh(tape, x, q));
  tape.backward(loss);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double s = 1.0 / std::cosh(xs[i]);
    EXPECT_NEAR(x.grad()[i], s * s, 1e-5);
  }
}

TEST(QuantizeTanh, OutputsAreGridPointsOfTheAffineMap) {
  QuantConfig q = uniform(2, 1.0);
  q.mode = QuantMode::tanh;
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n(0.0, 2.0);
  std::vector<double> xs(500);
  for (auto& x : xs) x = n(rng);
  Tape<double> tape;
  const auto y = quantize_tanh(tape, Tensor<double>(Shape{xs.size()}, xs), q);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double u = (y[i] + 1) / 2;
    EXPECT_NEAR(u * 3, std::round(u * 3), 1e-12);
  }
}

TEST(QuantizedActivation, OffModeIsPlainClamp) {
  QuantConfig q = uniform(2);
  q.mode = QuantMode::off;
  Tape<double> tape;
  const auto y = quantized_activation(tape, Tensor<double>(Shape{3}, {-1.0, 2.5, 9.0}), q);
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 2.5);
  EXPECT_EQ(y[2], 6.0);
}

}  // namespace
}  // namespace dq
