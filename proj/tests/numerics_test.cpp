#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "prism/numerics.hpp"
#include "prism/rng.hpp"
#include "test_util.hpp"

using namespace prism;

TEST(Softmax, ClosedForms) {
  const auto a = softmax(Vector{0, 0});
  EXPECT_DOUBLE_EQ(a[0], 0.5);
  EXPECT_DOUBLE_EQ(a[1], 0.5);

  const auto b = softmax(Vector{std::log(2.0), 0});
  EXPECT_NEAR(b[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(b[1], 1.0 / 3.0, 1e-15);

  for (double x : softmax(Vector{5, 5, 5})) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, Errors) {
  EXPECT_THROW(softmax(Vector{}), InvalidArgument);
  EXPECT_THROW(softmax(Vector{1.0, std::numeric_limits<double>::quiet_NaN()}), NonFiniteError);
  EXPECT_THROW(softmax(Vector{1.0, std::numeric_limits<double>::infinity()}), NonFiniteError);
}

TEST(Softmax, LargeLogitsStayFinite) {
  const auto p = softmax(Vector{1000.0, 999.0});
  EXPECT_NEAR(p[0] + p[1], 1.0, 1e-15);
  EXPECT_GT(p[0], p[1]);
}

TEST(Softmax, ShiftInvarianceAndMonotonicity) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = 1 + rng.uniform_int(9);
    Vector v(n);
    for (double& x : v) x = rng.uniform(-10, 10);
    const double c = rng.uniform(-50, 50);
    Vector shifted = v;
    for (double& x : shifted) x += c;
    const auto p = softmax(v);
    const auto q = softmax(shifted);
    EXPECT_LT(max_abs_diff(p, q), 1e-12);
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s += p[i];
      for (std::size_t j = 0; j < n; ++j) {
        if (v[i] > v[j]) {
          EXPECT_GE(p[i], p[j]);
        }
      }
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(BlockwiseSoftmax, Examples) {
  EXPECT_EQ(blockwise_softmax(Vector{0, 0, 0, 0}, 2, 2), (Vector{0.5, 0.5, 0.5, 0.5}));
  const auto p = blockwise_softmax(Vector{std::log(2.0), 0, 0, 0}, 2, 2);
  EXPECT_NEAR(p[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(p[1], 1.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(p[2], 0.5);
  EXPECT_DOUBLE_EQ(p[3], 0.5);
  EXPECT_THROW(blockwise_softmax(Vector(5, 0.0), 2, 3), DimensionError);
}

TEST(ColumnStochastic, Examples) {
  const auto z = column_stochastic_from_logits(Matrix(2, 2));
  EXPECT_EQ(z, (Matrix{{0.5, 0.5}, {0.5, 0.5}}));

  const auto b = column_stochastic_from_logits(Matrix{{std::log(3.0), 0}, {0, 0}});
  EXPECT_NEAR(b(0, 0), 0.75, 1e-15);
  EXPECT_NEAR(b(1, 0), 0.25, 1e-15);
  EXPECT_DOUBLE_EQ(b(0, 1), 0.5);

  EXPECT_THROW(column_stochastic_from_logits(Matrix(2, 3)), DimensionError);
}

TEST(ColumnStochastic, ColumnsSumToOneAndPositive) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = 2 + rng.uniform_int(7);
    Matrix logits(k, k);
    for (double& x : logits.flat()) x = rng.uniform(-20, 20);
    const auto b = column_stochastic_from_logits(logits);
    for (std::size_t j = 0; j < k; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < k; ++i) {
        EXPECT_GT(b(i, j), 0.0);
        s += b(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Neumann, Examples) {
  const auto eye = Matrix::identity(3);
  EXPECT_EQ(neumann_inverse(eye, 7), eye);
  EXPECT_EQ(neumann_inverse(eye, 0), eye);
  const Matrix b{{0.9, 0.1}, {0.1, 0.9}};
  EXPECT_EQ(neumann_inverse(b, 0), Matrix::identity(2));
  // det = 0.8, inverse = (1/0.8) [[0.9, -0.1], [-0.1, 0.9]]
  const Matrix expected{{1.125, -0.125}, {-0.125, 1.125}};
  EXPECT_LT(max_abs_diff(neumann_inverse(b, 30), expected), 1e-6);
}

TEST(Neumann, GuardRejectsLargeDeviation) {
  const Matrix b{{0.4, 0.6}, {0.6, 0.4}};  // ||I - B||_1 = 1.2
  EXPECT_FALSE(neumann_applicable(b));
  EXPECT_THROW(neumann_inverse(b, 4), NeumannGuardError);
  EXPECT_THROW(neumann_inverse(Matrix(2, 3), 4), DimensionError);
}

TEST(Neumann, ErrorShrinksWithOrder) {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const auto k = 2 + rng.uniform_int(5);
    Matrix logits(k, k);
    for (double& x : logits.flat()) x = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < k; ++i) logits(i, i) += 5.0;
    const auto b = column_stochastic_from_logits(logits);
    ASSERT_TRUE(neumann_applicable(b));
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t <= 30; ++t) {
      const double err = max_abs_diff(matmul(neumann_inverse(b, t), b), Matrix::identity(k));
      EXPECT_LE(err, prev * (1 + 1e-12) + 1e-15);
      prev = err;
    }
    EXPECT_LT(prev, 1e-8);
  }
}

TEST(ExactInverse, Examples) {
  EXPECT_EQ(exact_inverse(Matrix::identity(4)), Matrix::identity(4));
  EXPECT_EQ(exact_inverse(Matrix{{2, 0}, {0, 4}}), (Matrix{{0.5, 0}, {0, 0.25}}));
  EXPECT_THROW(exact_inverse(Matrix{{1, 1}, {1, 1}}), SingularMatrixError);
  EXPECT_THROW(exact_inverse(Matrix(2, 3)), DimensionError);
}

TEST(ExactInverse, RoundTripAgainstEigen) {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    const auto k = 1 + rng.uniform_int(10);
    Matrix a(k, k);
    for (double& x : a.flat()) x = rng.uniform(-1, 1);
    for (std::size_t i = 0; i < k; ++i) a(i, i) += static_cast<double>(k);  // well conditioned
    const auto inv = exact_inverse(a);
    EXPECT_LT(max_abs_diff(matmul(a, inv), Matrix::identity(k)), 1e-8);
    EXPECT_LT(max_abs_diff(inv, test_util::eigen_inverse(a)), 1e-10);
  }
}
