#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "dq/lipschitz.hpp"
#include "dq/optim.hpp"
#include "support/gradcheck.hpp"

namespace dq {
namespace {

Eigen::MatrixXd to_eigen(const Tensor<double>& w) {
  Eigen::MatrixXd m(w.dim(0), w.dim(1));
  for (std::size_t r = 0; r < w.dim(0); ++r)
    for (std::size_t c = 0; c < w.dim(1); ++c) m(r, c) = w[r * w.dim(1) + c];
  return m;
}

Tensor<double> from_eigen(const Eigen::MatrixXd& m) {
  std::vector<double> v(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[r * m.cols() + c] = m(r, c);
  return Tensor<double>(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())}, v);
}

double penalty(const Tensor<double>& w) {
  Tape<double> tape;
  return orthogonal_penalty(tape, w).item();
}

TEST(OrthogonalPenalty, Examples) {
  EXPECT_EQ(penalty(from_eigen(Eigen::MatrixXd::Identity(3, 3))), 0.0);
  EXPECT_DOUBLE_EQ(penalty(from_eigen(2 * Eigen::MatrixXd::Identity(2, 2))), 18.0);
  const double t = 0.7;
  Eigen::MatrixXd rot(2, 2);
  rot << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
  EXPECT_NEAR(penalty(from_eigen(rot)), 0.0, 1e-10);
}

TEST(OrthogonalPenalty, UsesTheSmallerGramSide) {
  std::mt19937_64 rng(3);
  for (auto [r, c] : {std::pair{3, 7}, std::pair{7, 3}}) {
    const auto w = testing::random_tensor({std::size_t(r), std::size_t(c)}, rng);
    const Eigen::MatrixXd m = to_eigen(w);
    const Eigen::MatrixXd g = r <= c ? Eigen::MatrixXd(m * m.transpose()) : Eigen::MatrixXd(m.transpose() * m);
    const double expected = (g - Eigen::MatrixXd::Identity(g.rows(), g.cols())).squaredNorm();
    EXPECT_NEAR(penalty(w), expected, 1e-12);
  }
}

TEST(OrthogonalPenalty, ZeroOnRowOrthogonalWideMatrix) {
  std::mt19937_64 rng(4);
  const Eigen::MatrixXd a = to_eigen(testing::random_tensor({8, 8}, rng));
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  const Eigen::MatrixXd q = qr.householderQ();
  EXPECT_NEAR(penalty(from_eigen(q.topRows(4))), 0.0, 1e-12);
}

TEST(OrthogonalPenalty, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const auto w = testing::random_tensor({testing::pick(rng, 1, 6), testing::pick(rng, 1, 6)}, rng);
    EXPECT_LT(testing::gradcheck([](auto& t, const testing::Inputs& in) { return orthogonal_penalty(t, in[0]); },
                                 {w}, rng),
              1e-4);
  }
}

TEST(ReshapeConvWeight, RowMajorFilterFlattening) {
  Tensor<double> w(Shape{2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tape<double> tape;
  const auto m = reshape_conv_weight(tape, w);
  ASSERT_EQ(m.shape(), (Shape{2, 4}));
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(m[i], w[i]);
  EXPECT_EQ(reshape_conv_weight(tape, Tensor<double>(Shape{8, 3, 3, 3})).shape(), (Shape{8, 27}));
  const auto back = reshape(tape, m, w.shape());
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(back[i], w[i]);
}

TEST(TotalLoss, BetaZeroIsTheCrossEntropyItself) {
  Tensor<double> ce = Tensor<double>::scalar(1.2345, true);
  Tensor<double> w(Shape{2, 2}, {2, 0, 0, 2}, true);
  Tape<double> tape;
  const auto total = total_loss(tape, ce, {{"w", w}}, RegConfig{});
  EXPECT_TRUE(total.same_node(ce));
}

TEST(TotalLoss, Example) {
  RegConfig reg;
  reg.beta = 1e-3;
  Tape<double> tape;
  const auto total =
      total_loss(tape, Tensor<double>::scalar(1.0), {{"w", Tensor<double>(Shape{2, 2}, {2, 0, 0, 2})}}, reg);
  EXPECT_NEAR(total.item(), 1.009, 1e-15);
}

TEST(TotalLoss, ApplyToSelectsLayers) {
  RegConfig reg;
  reg.beta = 2.0;
  reg.apply_to = {"b"};
  Tape<double> tape;
  const Tensor<double> a(Shape{2, 2}, {2, 0, 0, 2});
  const Tensor<double> b(Shape{1, 2}, {1, 1});  // W W^T = 2, penalty 1
  EXPECT_DOUBLE_EQ(total_loss(tape, Tensor<double>::scalar(0.0), {{"a", a}, {"b", b}}, reg).item(), 1.0);
}

TEST(ConvexAggregate, Endpoints) {
  const Tensor<double> a(Shape{3}, {1, 2, 3}), b(Shape{3}, {-1, 5, 0});
  Tape<double> tape;
  const auto at1 = convex_aggregate(tape, a, b, Tensor<double>::scalar(1.0));
  const auto at0 = convex_aggregate(tape, a, b, Tensor<double>::scalar(0.0));
  const auto same = convex_aggregate(tape, a, a, Tensor<double>::scalar(0.5));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(at1[i], a[i]);
    EXPECT_EQ(at0[i], b[i]);
    EXPECT_EQ(same[i], a[i]);
  }
}

TEST(ConvexAggregate, StaysOnTheSegment) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = testing::random_tensor({5}, rng), b = testing::random_tensor({5}, rng);
    const double alpha = std::uniform_real_distribution<double>(0, 1)(rng);
    Tape<double> tape;
    const auto y = convex_aggregate(tape, a, b, Tensor<double>::scalar(alpha));
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(y[i], std::min(a[i], b[i]) - 1e-15);
      EXPECT_LE(y[i], std::max(a[i], b[i]) + 1e-15);
    }
  }
}

TEST(ConvexAggregate, ShapeMismatchThrows) {
  Tape<double> tape;
  EXPECT_THROW(convex_aggregate(tape, Tensor<double>(Shape{2}), Tensor<double>(Shape{3}), Tensor<double>::scalar(0.5)),
               ShapeError);
}

TEST(ProjectCoeff, ClipsToUnitInterval) {
  EXPECT_EQ(project_coeff(1.3), 1.0);
  EXPECT_EQ(project_coeff(-0.2), 0.0);
  EXPECT_EQ(project_coeff(0.7), 0.7);
}

TEST(SpectralNorm, Examples) {
  EXPECT_NEAR(spectral_norm(Tensor<double>(Shape{2, 2}, {3, 0, 0, 1}), 200, 1), 3.0, 1e-6);
  std::mt19937_64 rng(8);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(to_eigen(testing::random_tensor({5, 5}, rng)));
  EXPECT_NEAR(spectral_norm(from_eigen(qr.householderQ()), 200, 2), 1.0, 1e-6);
  EXPECT_EQ(spectral_norm(Tensor<double>(Shape{3, 4}), 10, 3), 0.0);
}

TEST(SpectralNorm, MatchesSvdOracle) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    const auto w = testing::random_tensor({8, 16}, rng);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(to_eigen(w));
    EXPECT_NEAR(spectral_norm(w, 200, trial), svd.singularValues()(0), 1e-4);
  }
}

TEST(OrthogonalPenalty, DescentConvergesToUnitSingularValues) {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 0.1);
  std::vector<double> v(16 * 32);
  for (auto& e : v) e = n(rng);
  Tensor<double> w(Shape{16, 32}, v, true);
  std::vector<Tensor<double>> params{w};
  SgdMomentum<double> opt(0.0);
  auto converged = [&] {
    const auto s = Eigen::JacobiSVD<Eigen::MatrixXd>(to_eigen(w)).singularValues();
    return s.minCoeff() >= 0.99 && s.maxCoeff() <= 1.01;
  };
  int step = 0;
  for (; step < 5000 && !converged(); ++step) {
    Tape<double> tape;
    Tensor<double> loss = orthogonal_penalty(tape, w);
    tape.backward(loss);
    opt.step(params, 0.1);
    SgdMomentum<double>::zero_grad(params);
  }
  EXPECT_TRUE(converged()) << "after " << step << " steps";
}

}  // namespace
}  // namespace dq
