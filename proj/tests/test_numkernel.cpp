#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fastv/numkernel.hpp"
#include "test_util.hpp"

namespace fastv {
namespace {

using testing::naive_matmul;
using testing::random_matrix;

TEST(Matmul, IdentityTimesMatrix) {
  MacCounter counter;
  auto m = DenseMatrix::from_rows({{1.5f, -2.0f}, {0.25f, 7.0f}});
  auto out = matmul(DenseMatrix::identity(2), m, counter, "s");
  EXPECT_EQ(out, m);
  EXPECT_EQ(counter.total(), 8u);
  EXPECT_EQ(counter.scope("s"), 8u);
}

TEST(Matmul, OnesDotProduct) {
  MacCounter counter;
  auto out = matmul(DenseMatrix(1, 3, 1.0f), DenseMatrix(3, 1, 1.0f), counter, "dot");
  ASSERT_EQ(out.rows(), 1u);
  ASSERT_EQ(out.cols(), 1u);
  EXPECT_EQ(out(0, 0), 3.0f);
  EXPECT_EQ(counter.total(), 3u);
}

TEST(Matmul, MatchesTripleLoopOn4x5By5x2) {
  auto a = random_matrix(4, 5, 11);
  auto b = random_matrix(5, 2, 12);
  auto c = matmul(a, b);
  auto ref = naive_matmul(a, b);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(c.data()[i], ref[i], 1e-6);
}

TEST(Matmul, MatchesTripleLoopOnRandomShapesUpTo64) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    auto a = random_matrix(m, k, rng());
    auto b = random_matrix(k, n, rng());
    auto c = matmul(a, b);
    auto ref = naive_matmul(a, b);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const double tol = 1e-5 * std::max(1.0, std::abs(ref[i]));
      ASSERT_NEAR(c.data()[i], ref[i], tol) << m << "x" << k << "x" << n;
    }
  }
}

TEST(Matmul, RowResultsIndependentOfOtherRows) {
  // Bits of a row must not depend on tile position or on neighbouring rows.
  auto a = random_matrix(37, 300, 5);
  auto b = random_matrix(300, 290, 6);
  auto full = matmul(a, b);
  for (std::size_t r : {0u, 3u, 4u, 35u, 36u}) {
    std::size_t idx[1] = {r};
    auto single = matmul(a.select_rows(idx), b);
    for (std::size_t c = 0; c < b.cols(); ++c) ASSERT_EQ(single(0, c), full(r, c)) << r << "," << c;
  }
}

TEST(Matmul, CounterIsExactSumOfShapes) {
  MacCounter counter;
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> dim(1, 20);
  std::uint64_t expected = 0;
  for (int i = 0; i < 25; ++i) {
    const std::size_t m = dim(rng), k = dim(rng), n = dim(rng);
    matmul(DenseMatrix(m, k), DenseMatrix(k, n), counter, i % 2 ? "odd" : "even");
    expected += m * k * n;
  }
  EXPECT_EQ(counter.total(), expected);
  EXPECT_EQ(counter.scope("odd") + counter.scope("even"), expected);
}

TEST(Matmul, DimensionMismatchNamesShapes) {
  try {
    matmul(DenseMatrix(2, 3), DenseMatrix(4, 2));
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("(2x3)"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(4x2)"), std::string::npos);
  }
}

TEST(Softmax, HandValues) {
  auto p = softmax_rows(DenseMatrix::from_rows({{0.0f, 0.0f}}));
  EXPECT_FLOAT_EQ(p(0, 0), 0.5f);
  EXPECT_FLOAT_EQ(p(0, 1), 0.5f);

  p = softmax_rows(DenseMatrix::from_rows({{std::log(2.0f), 0.0f}}));
  EXPECT_NEAR(p(0, 0), 2.0 / 3.0, 1e-6);
  EXPECT_NEAR(p(0, 1), 1.0 / 3.0, 1e-6);

  p = softmax_rows(DenseMatrix::from_rows({{5.0f, kMasked, 5.0f}}));
  EXPECT_FLOAT_EQ(p(0, 0), 0.5f);
  EXPECT_EQ(p(0, 1), 0.0f);
  EXPECT_FLOAT_EQ(p(0, 2), 0.5f);
}

TEST(Softmax, RowsSumToOne) {
  auto m = random_matrix(30, 50, 8, -20.0f, 20.0f);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = r % 7; c < m.cols(); c += 3) m(r, c) = kMasked;
  auto p = softmax_rows(m);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (float v : p.row(r)) {
      EXPECT_GE(v, 0.0f);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, FullyMaskedRowIsError) {
  auto m = DenseMatrix::from_rows({{1.0f, 2.0f}, {kMasked, kMasked}});
  try {
    softmax_rows(m);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(LayerNorm, Cases) {
  std::vector<float> ones(3, 1.0f), zeros(3, 0.0f);
  auto out = layer_norm(DenseMatrix::from_rows({{4.0f, 4.0f, 4.0f}}), ones, zeros);
  for (float v : out.row(0)) EXPECT_EQ(v, 0.0f);

  std::vector<float> g2(2, 1.0f), b2(2, 0.0f);
  out = layer_norm(DenseMatrix::from_rows({{1.0f, -1.0f}}), g2, b2, 1e-12f);
  EXPECT_NEAR(out(0, 0), 1.0f, 1e-6);
  EXPECT_NEAR(out(0, 1), -1.0f, 1e-6);

  std::vector<float> g0(3, 0.0f), c(3, 2.5f);
  out = layer_norm(DenseMatrix::from_rows({{3.0f, -9.0f, 0.5f}}), g0, c);
  for (float v : out.row(0)) EXPECT_EQ(v, 2.5f);

  EXPECT_THROW(layer_norm(DenseMatrix(1, 3), g2, b2), ContractError);
}

TEST(Gelu, AsymptotesAndZero) {
  EXPECT_EQ(gelu(0.0f), 0.0f);
  EXPECT_NEAR(gelu(10.0f), 10.0f, 1e-4);
  EXPECT_NEAR(gelu(-10.0f), 0.0f, 1e-4);
  // Constant agrees with sqrt(2/pi).
  EXPECT_NEAR(kGeluSqrt2OverPi, std::sqrt(2.0 / std::numbers::pi), 1e-7);
}

}  // namespace
}  // namespace fastv
