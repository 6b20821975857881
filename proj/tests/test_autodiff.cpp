#include "gradient_cases.hpp"

#include <gtest/gtest.h>

using namespace wbt;

TEST(Autodiff, RowCosineOfSelfIsOne) {
  Rng rng(1);
  ad::Tape t;
  const ad::Tensor x = t.leaf(oracle::random_matrix(5, 4, rng));
  const Matrix c = ad::row_cosine(x, x).value();
  for (Eigen::Index i = 0; i < c.rows(); ++i) EXPECT_NEAR(c(i, 0), 1.0, 1e-15);
}

TEST(Autodiff, ZeroNormRowHasZeroCosineAndGradient) {
  ad::Tape t;
  Matrix a(2, 2);
  a << 0, 0, 1, 2;
  Matrix b(2, 2);
  b << 3, 4, 2, 1;
  const ad::Tensor ta = t.leaf(a, true), tb = t.leaf(b, true);
  const ad::Tensor c = ad::row_cosine(ta, tb);
  EXPECT_EQ(c.value()(0, 0), 0.0);
  t.backward(ad::sum(c));
  EXPECT_EQ(ta.grad().row(0).norm(), 0.0);
  EXPECT_EQ(tb.grad().row(0).norm(), 0.0);
  EXPECT_GT(ta.grad().row(1).norm(), 0.0);
}

TEST(Autodiff, ReluForwardAndBackward) {
  ad::Tape t;
  Matrix x(1, 2);
  x << -1, 2;
  const ad::Tensor tx = t.leaf(x, true);
  const ad::Tensor y = ad::relu(tx);
  EXPECT_EQ(y.value()(0, 0), 0.0);
  EXPECT_EQ(y.value()(0, 1), 2.0);
  t.backward(ad::sum(y));
  EXPECT_EQ(tx.grad()(0, 0), 0.0);
  EXPECT_EQ(tx.grad()(0, 1), 1.0);
}

TEST(Autodiff, SumGradientIsOnes) {
  ad::Tape t;
  const ad::Tensor x = t.leaf(Matrix::Constant(2, 2, 3.0), true);
  t.backward(ad::sum(x));
  EXPECT_EQ(x.grad(), Matrix::Ones(2, 2));
}

TEST(Autodiff, ZeroScaleGivesZeroGradient) {
  ad::Tape t;
  const ad::Tensor x = t.leaf(Matrix::Constant(2, 3, 1.5), true);
  t.backward(ad::sum(ad::scale(x, 0.0)));
  EXPECT_EQ(x.grad(), Matrix::Zero(2, 3));
}

TEST(Autodiff, NonScalarLossRejected) {
  ad::Tape t;
  const ad::Tensor x = t.leaf(Matrix::Ones(2, 2), true);
  EXPECT_THROW(t.backward(x), std::invalid_argument);
}

TEST(Autodiff, ShapeErrorNamesBothShapes) {
  ad::Tape t;
  try {
    ad::matmul(t.leaf(Matrix::Ones(2, 3)), t.leaf(Matrix::Ones(2, 3)));
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos);
  }
  EXPECT_THROW(ad::add(t.leaf(Matrix::Ones(2, 3)), t.leaf(Matrix::Ones(3, 2))), std::invalid_argument);
  EXPECT_THROW(ad::gather_rows(t.leaf(Matrix::Ones(2, 3)), {5}), std::out_of_range);
}

TEST(Autodiff, NonFiniteForwardThrows) {
  ad::Tape t;
  const ad::Tensor x = t.leaf(Matrix::Constant(1, 1, 1e308), true);
  EXPECT_THROW(ad::scale(x, 10.0), NumericError);
}

TEST(Autodiff, DropoutZeroIsIdentity) {
  Rng rng(3);
  ad::Tape t;
  const ad::Tensor x = t.leaf(oracle::random_matrix(4, 4, rng));
  EXPECT_EQ(ad::dropout(x, 0.0, rng).value(), x.value());
}

TEST(Autodiff, TapeIsDeterministic) {
  auto run = [] {
    Rng rng(99);
    ad::Tape t;
    const ad::Tensor a = t.leaf(oracle::random_matrix(6, 5, rng), true);
    const ad::Tensor b = t.leaf(oracle::random_matrix(5, 4, rng), true);
    const ad::Tensor loss = ad::sum(ad::sigmoid(ad::dropout(ad::matmul(a, b), 0.3, rng)));
    t.backward(loss);
    return std::make_tuple(loss.value()(0, 0), Matrix(a.grad()), Matrix(b.grad()));
  };
  EXPECT_EQ(run(), run());
}

TEST(Autodiff, LeafGradientsAccumulateAcrossUses) {
  ad::Tape t;
  const ad::Tensor x = t.leaf(Matrix::Constant(1, 1, 2.0), true);
  t.backward(ad::add(ad::scale(x, 3.0), ad::scale(x, 4.0)));
  EXPECT_EQ(x.grad()(0, 0), 7.0);
}

TEST(Autodiff, MatmulChainMatchesFiniteDifferences) {
  Rng rng(5);
  const Matrix a = oracle::random_matrix(4, 3, rng), b = oracle::random_matrix(3, 3, rng),
               c = oracle::random_matrix(3, 3, rng);
  const auto r = oracle::grad_check(
      [](ad::Tape&, const auto& x) { return ad::sum(ad::matmul(ad::matmul(x[0], x[1]), x[2])); }, {a, b, c});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Autodiff, TwoLayerMlpMatchesFiniteDifferences) {
  Rng rng(6);
  Mlp m = init_mlp(3, 5, 2, rng);
  m.first.bias = oracle::random_matrix(1, 5, rng);
  const Matrix x = oracle::random_matrix(4, 3, rng);
  std::vector<Matrix*> params{&m.first.weight, &m.first.bias, &m.slope, &m.second.weight, &m.second.bias};
  auto loss = [&](ad::Tape& t, Binding& b) { return ad::sum(ad::sigmoid(apply_mlp(b, m, t.leaf(x)))); };
  const auto r = oracle::grad_check_params(
      params,
      [&] {
        ad::Tape t;
        Binding b(t, true);
        t.backward(loss(t, b));
        std::vector<Matrix> g;
        for (Matrix* p : params) g.push_back(b.grad(*p));
        return g;
      },
      [&] {
        ad::Tape t;
        Binding b(t, false);
        return loss(t, b).value()(0, 0);
      });
  EXPECT_LT(r.max_rel_error, 1e-4);
}

class GradientCase : public ::testing::TestWithParam<std::size_t> {};

TEST_P(GradientCase, FiniteDifferences) {
  const auto cases = oracle::gradient_cases();
  const auto& [name, check] = cases[GetParam()];
  Rng rng(derive_seed(1234, {GetParam()}));
  for (int trial = 0; trial < 10; ++trial) {
    const auto r = check(rng);
    EXPECT_LT(r.max_rel_error, 1e-4) << name << " trial " << trial;
    EXPECT_GT(r.checked, 0u);
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradientCase, ::testing::Range<std::size_t>(0, oracle::gradient_cases().size()),
                         [](const auto& info) { return oracle::gradient_cases()[info.param].first; });

TEST(Adam, ZeroGradientNoDecayLeavesParamsUnchanged) {
  Matrix w = Matrix::Constant(2, 2, 0.7);
  const Matrix g = Matrix::Zero(2, 2);
  AdamState s;
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  adam_step({{"w", &w}}, {&g}, s, cfg);
  EXPECT_EQ(w, Matrix::Constant(2, 2, 0.7));
}

TEST(Adam, FirstStepMovesAgainstGradientSign) {
  Matrix w = Matrix::Zero(1, 3);
  Matrix g(1, 3);
  g << 2.0, -0.5, 1e-3;
  AdamState s;
  adam_step({{"w", &w}}, {&g}, s, AdamConfig{});
  EXPECT_LT(w(0, 0), 0.0);
  EXPECT_GT(w(0, 1), 0.0);
  EXPECT_LT(w(0, 2), 0.0);
  EXPECT_NEAR(w(0, 0), -1e-3, 1e-9);
}

TEST(Adam, NonFiniteGradientNamesParameter) {
  Matrix w = Matrix::Zero(1, 1);
  const Matrix g = Matrix::Constant(1, 1, std::numeric_limits<double>::quiet_NaN());
  AdamState s;
  try {
    adam_step({{"encoder.weird", &w}}, {&g}, s, AdamConfig{});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("encoder.weird"), std::string::npos);
  }
}

TEST(Adam, QuadraticBowlLossDecreasesAfterWarmup) {
  Rng rng(8);
  Matrix w = oracle::random_matrix(3, 3, rng);
  AdamState s;
  AdamConfig cfg;
  cfg.lr = 1e-2;
  cfg.weight_decay = 0.0;
  std::vector<double> losses;
  for (int step = 0; step < 100; ++step) {
    losses.push_back(w.squaredNorm());
    const Matrix g = 2.0 * w;
    adam_step({{"w", &w}}, {&g}, s, cfg);
  }
  for (std::size_t i = 10; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]);
}
