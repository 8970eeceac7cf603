#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "sglab/error.hpp"
#include "sglab/metrics.hpp"

using namespace sg;

namespace {

GaussianSummary summary(Eigen::VectorXd mean, Eigen::MatrixXd cov) {
  GaussianSummary g;
  g.count = 100;
  g.mean = std::move(mean);
  g.covariance = std::move(cov);
  return g;
}

std::vector<double> normal_samples(std::size_t n, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n * static_cast<std::size_t>(dim));
  for (auto& x : v) x = normal(rng);
  return v;
}

}  // namespace

TEST(Metrics, GaussianFitExamples) {
  const std::vector<double> pts{0, 0, 2, 0, 0, 2, 2, 2};
  GaussianSummary g = gaussian_fit(pts, 2);
  EXPECT_EQ(g.count, 4u);
  EXPECT_DOUBLE_EQ(g.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(g.mean(1), 1.0);
  // Unbiased: sum of squared deviations 4 over n - 1 = 3.
  EXPECT_DOUBLE_EQ(g.covariance(0, 0), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(g.covariance(0, 1), 0.0);
  EXPECT_THROW(gaussian_fit(std::vector<double>{1, 2}, 2), DomainError);
  EXPECT_THROW(gaussian_fit(std::vector<double>{1, 2, 3}, 2), DimensionError);
}

TEST(Metrics, FitOfStandardNormal) {
  const auto v = normal_samples(100000, 3, 1);
  GaussianSummary g = gaussian_fit(v, 3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_NEAR(g.mean(i), 0.0, 0.02);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(g.covariance(i, j), i == j ? 1.0 : 0.0, 0.02);
  }
}

TEST(Metrics, FrechetClosedForms) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(2);
  EXPECT_NEAR(frechet_distance(summary(zero, I), summary(zero, I)), 0.0, 1e-6);
  Eigen::VectorXd shift(2);
  shift << 1.0, 0.0;
  EXPECT_NEAR(frechet_distance(summary(zero, I), summary(shift, I)), 1.0, 1e-6);
  // Commuting covariances I and 4I in 2D: tr(I + 4I - 2 * 2I) = 2.
  EXPECT_NEAR(frechet_distance(summary(zero, I), summary(zero, 4.0 * I)), 2.0, 1e-6);
}

TEST(Metrics, FrechetGeneralCase) {
  // Diagonal but unequal covariances: sum_i (sqrt(a_i) - sqrt(b_i))^2.
  Eigen::MatrixXd a = Eigen::Vector3d(1.0, 4.0, 9.0).asDiagonal();
  Eigen::MatrixXd b = Eigen::Vector3d(4.0, 1.0, 0.25).asDiagonal();
  const double expected = 1.0 + 1.0 + 6.25;
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  EXPECT_NEAR(frechet_distance(summary(zero, a), summary(zero, b)), expected, 1e-9);

  // Rotating both covariances leaves the distance unchanged; so does the order.
  Eigen::Matrix3d R = Eigen::AngleAxisd(0.7, Eigen::Vector3d(1, 2, 3).normalized()).toRotationMatrix();
  Eigen::MatrixXd ra = R * a * R.transpose(), rb = R * b * R.transpose();
  EXPECT_NEAR(frechet_distance(summary(zero, ra), summary(zero, rb)), expected, 1e-9);
  EXPECT_NEAR(frechet_distance(summary(zero, rb), summary(zero, ra)), expected, 1e-9);

  // Singular covariance: the root is clipped at zero rather than going NaN.
  Eigen::MatrixXd s = Eigen::Vector3d(1.0, 0.0, 0.0).asDiagonal();
  const double fd = frechet_distance(summary(zero, s), summary(zero, s));
  EXPECT_TRUE(std::isfinite(fd));
  EXPECT_NEAR(fd, 0.0, 1e-9);

  EXPECT_THROW(frechet_distance(summary(zero, a), summary(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2))),
               DimensionError);
}

TEST(Metrics, DiversityOfStandardNormal) {
  // |X - Y| for independent N(0, I_2) is Rayleigh with scale sqrt(2): mean sqrt(pi).
  const auto v = normal_samples(20000, 2, 2);
  EXPECT_NEAR(pairwise_diversity(v, 2, 20000, 0), std::sqrt(std::numbers::pi), 0.02);
}

TEST(Metrics, DiversityExamples) {
  EXPECT_DOUBLE_EQ(pairwise_diversity(std::vector<double>{0, 0, 3, 4}, 2), 5.0);
  EXPECT_DOUBLE_EQ(pairwise_diversity(std::vector<double>{1, 1, 1, 1, 1, 1}, 2), 0.0);
  const auto v = normal_samples(500, 2, 3);
  std::vector<double> moved = v, scaled = v;
  for (std::size_t i = 0; i < v.size(); ++i) {
    moved[i] += i % 2 ? 7.0 : -3.0;
    scaled[i] *= 2.5;
  }
  const double base = pairwise_diversity(v, 2, 1000, 5);
  EXPECT_NEAR(pairwise_diversity(moved, 2, 1000, 5), base, 1e-12);
  EXPECT_NEAR(pairwise_diversity(scaled, 2, 1000, 5), 2.5 * base, 1e-12);
  EXPECT_EQ(pairwise_diversity(v, 2, 1000, 5), base);  // seeded, so repeatable
  EXPECT_THROW(pairwise_diversity(std::vector<double>{1, 2}, 2), DomainError);
}

TEST(Metrics, ClassConditionalDistance) {
  SampleSet a, b;
  a.dim = b.dim = 1;
  // Class 0 identical in both sets, class 1 shifted by 2.
  for (int i = 0; i < 10; ++i) {
    const double x = i * 0.1;
    a.values.push_back(x);
    a.conds.push_back(Condition::of(0));
    b.values.push_back(x);
    b.conds.push_back(Condition::of(0));
    a.values.push_back(x);
    a.conds.push_back(Condition::of(1));
    b.values.push_back(x + 2.0);
    b.conds.push_back(Condition::of(1));
  }
  EXPECT_NEAR(class_conditional_fd(a, b), 2.0, 1e-9);  // mean of 0 and 4
  EXPECT_GT(pooled_fd(a, b), 0.0);
  SampleSet lonely;
  lonely.dim = 1;
  lonely.values = {0.0};
  lonely.conds = {Condition::of(5)};
  EXPECT_THROW(class_conditional_fd(lonely, b), DomainError);
}
