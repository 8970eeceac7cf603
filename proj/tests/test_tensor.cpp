#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "sglab/error.hpp"
#include "sglab/grad_check.hpp"
#include "sglab/tensor.hpp"
#include "test_util.hpp"

using namespace sg;
using sgtest::random_tensor;

namespace {

constexpr double kGradTol = 1e-3;

// Scalar probe: sum of the output against fixed random weights, so every
// output element contributes with a distinct coefficient.
Tensor probe(const Tensor& y, std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(y.shape(), rng);
  return sum(mul(y, w));
}

}  // namespace

TEST(Tensor, MatmulExamples) {
  Tensor i2 = Tensor::identity(2);
  Tensor p = matmul(i2, i2);
  EXPECT_EQ(std::vector<double>(p.data().begin(), p.data().end()), (std::vector<double>{1, 0, 0, 1}));

  Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor ones = Tensor::from({2, 1}, {1, 1});
  Tensor y = matmul(a, ones);
  ASSERT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_EQ(y.at(0, 0), 3.0);
  EXPECT_EQ(y.at(1, 0), 7.0);

  Tensor z = matmul(a, Tensor::zeros({2, 3}));
  for (double v : z.data()) EXPECT_EQ(v, 0.0);
}

TEST(Tensor, ElementaryValues) {
  Tensor s = softmax_lastdim(Tensor::from({1, 2}, {0.0, 0.0}));
  EXPECT_DOUBLE_EQ(s.at(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s.at(0, 1), 0.5);

  Tensor n = rmsnorm(Tensor::filled({1, 4}, 3.0), 0.0);
  for (double v : n.data()) EXPECT_NEAR(v, 1.0, 1e-15);

  EXPECT_EQ(gelu(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(gelu(Tensor::scalar(1.0)).item(), 0.8413447460685429, 1e-14);
}

TEST(Tensor, ShapeErrors) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), DimensionError);
  EXPECT_THROW(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4, 2}), DimensionError);
  EXPECT_THROW(Tensor::zeros({2, 2}, true).backward(), DimensionError);
  const std::size_t bad[] = {5};
  EXPECT_THROW(gather_rows(Tensor::zeros({2, 2}), bad), DimensionError);
}

TEST(Tensor, SquareSumGradient) {
  Tensor x = Tensor::from({1, 2}, {1.0, 2.0}, true);
  sum(mul(x, x)).backward();
  EXPECT_EQ(x.grad(), (std::vector<double>{2.0, 4.0}));
  EXPECT_LT(grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x), 1e-5);
}

TEST(Tensor, SharedSubexpressionAccumulates) {
  // y = u * u with u = 3x: dy/dx = 18x, reached through both factors.
  Tensor x = Tensor::scalar(2.0, true);
  Tensor u = scale(x, 3.0);
  Tensor y = mul(u, u);
  y.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 36.0);

  Graph g(y);
  // x, u and y each appear exactly once.
  EXPECT_EQ(g.order().size(), 3u);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
  Tensor x = Tensor::scalar(1.0, true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    Tensor y = mul(x, x);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(mul(x, x).requires_grad());
}

TEST(Tensor, MacCounterCountsMatmul) {
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({4, 5});
  MacCounter counter;
  matmul(a, b);
  EXPECT_EQ(counter.count(), 60u);
}

TEST(Tensor, ConstantFunctionHasZeroGradient) {
  Tensor x = Tensor::from({2, 2}, {0.1, 0.2, 0.3, 0.4}, true);
  Tensor y = add_scalar(scale(sum(x), 0.0), 5.0);
  y.backward();
  for (double g : x.grad()) EXPECT_EQ(g, 0.0);
}

TEST(GradCheck, RejectsBadEpsAndNonFinite) {
  Tensor x = Tensor::from({1, 2}, {1.0, 2.0}, true);
  auto f = [](const Tensor& t) { return sum(mul(t, t)); };
  EXPECT_THROW(grad_check(f, x, 1e-2), DomainError);
  EXPECT_THROW(grad_check(f, x, 1e-8), DomainError);
  auto inf = [](const Tensor& t) { return scale(sum(t), std::numeric_limits<double>::infinity()); };
  EXPECT_THROW(grad_check(inf, x), NumericError);
}

// ---- per-op finite-difference checks --------------------------------------------------

class OpGrad : public ::testing::Test {
 protected:
  std::mt19937_64 rng{1234};
  Tensor leaf(Shape s) { return random_tensor(std::move(s), rng, -1.0, 1.0, true); }
};

TEST_F(OpGrad, Matmul) {
  Tensor a = leaf({3, 4}), b = leaf({4, 2});
  Tensor leaves[] = {a, b};
  EXPECT_LT(grad_check([&] { return probe(matmul(a, b)); }, leaves).max_relative_error, kGradTol);
}

TEST_F(OpGrad, Elementwise) {
  Tensor a = leaf({2, 3}), b = leaf({2, 3}), s = leaf({1, 1});
  Tensor leaves[] = {a, b, s};
  auto f = [&] {
    return probe(add(mul(sub(a, b), add(a, s)), add_scalar(scale(mul(b, s), 0.7), 0.2)));
  };
  EXPECT_LT(grad_check(f, leaves).max_relative_error, kGradTol);
}

TEST_F(OpGrad, Nonlinearities) {
  Tensor a = leaf({3, 5});
  EXPECT_LT(grad_check([](const Tensor& t) { return probe(gelu(t)); }, a), kGradTol);
  EXPECT_LT(grad_check([](const Tensor& t) { return probe(softmax_lastdim(t)); }, a), kGradTol);
  EXPECT_LT(grad_check([](const Tensor& t) { return probe(rmsnorm(t)); }, a), kGradTol);
  Tensor g = leaf({1, 5});
  Tensor leaves[] = {a, g};
  EXPECT_LT(grad_check([&] { return probe(rmsnorm(a, g)); }, leaves).max_relative_error, kGradTol);
}

TEST_F(OpGrad, Reductions) {
  Tensor a = leaf({3, 4});
  const double w[] = {0.5, 0.0, 2.0};
  EXPECT_LT(grad_check([](const Tensor& t) { return mean(mul(t, t)); }, a), kGradTol);
  EXPECT_LT(grad_check([&](const Tensor& t) { return weighted_row_sq_sum(t, w); }, a), kGradTol);
}

TEST_F(OpGrad, Indexing) {
  Tensor a = leaf({4, 6}), r = leaf({2, 6});
  const std::size_t idx[] = {3, 1};
  const std::size_t gather_idx[] = {2, 0, 2};
  const std::size_t counts[] = {1, 0, 3, 2};
  Tensor leaves[] = {a, r};
  auto f = [&] {
    Tensor y = place_rows(a, r, idx);
    return add(add(probe(gather_rows(y, gather_idx), 1), probe(repeat_rows(a, counts), 2)),
               add(probe(slice_cols(y, 1, 4), 3), probe(reshape(y, {2, 12}), 4)));
  };
  EXPECT_LT(grad_check(f, leaves).max_relative_error, kGradTol);
}

TEST_F(OpGrad, RopeAndAttention) {
  const std::size_t heads = 2, rows = 5, width = 8;
  Tensor q = leaf({rows, width}), k = leaf({rows, width}), v = leaf({rows, width});
  std::vector<double> angles(rows * width / heads / 2);
  for (std::size_t i = 0; i < angles.size(); ++i) angles[i] = 0.37 * static_cast<double>(i);
  const std::size_t offsets[] = {0, 2, 5};
  Tensor leaves[] = {q, k, v};
  auto f = [&] {
    return probe(segmented_attention(rope(q, angles, heads), rope(k, angles, heads), v, heads, offsets));
  };
  EXPECT_LT(grad_check(f, leaves).max_relative_error, kGradTol);
}

TEST(Tensor, SegmentsDoNotInteract) {
  std::mt19937_64 rng(5);
  Tensor q = random_tensor({4, 4}, rng), k = random_tensor({4, 4}, rng), v = random_tensor({4, 4}, rng);
  const std::size_t split[] = {0, 2, 4};
  const std::size_t first[] = {0, 2};
  Tensor full = segmented_attention(q, k, v, 2, split);
  const std::size_t rows01[] = {0, 1};
  Tensor alone = segmented_attention(gather_rows(q, rows01), gather_rows(k, rows01), gather_rows(v, rows01), 2, first);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(full.data()[i], alone.data()[i]);
}
