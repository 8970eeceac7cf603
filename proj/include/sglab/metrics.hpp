#pragma once

// Data-space sample metrics: Frechet distance between Gaussian fits and the
// mean pairwise distance. Samples are flat row-major n x dim arrays.

#include <Eigen/Dense>
#include <cstdint>
#include <span>

#include "sglab/sampler.hpp"

namespace sg {

struct GaussianSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // unbiased, divisor n - 1
  std::size_t count = 0;
};

GaussianSummary gaussian_fit(std::span<const double> samples, int dim);

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^1/2). The root trace is taken
// from the eigenvalues of S_a^1/2 S_b S_a^1/2, clipped at zero once they are
// within tolerance of it.
double frechet_distance(const GaussianSummary& a, const GaussianSummary& b);

// Mean FD over classes present in both sets with at least two samples each.
double class_conditional_fd(const SampleSet& generated, const SampleSet& reference);
// FD of the pooled sets.
double pooled_fd(const SampleSet& generated, const SampleSet& reference);

// Mean Euclidean distance over `pairs` seeded random pairs i != j, or over
// all pairs when there are no more than that.
double pairwise_diversity(std::span<const double> samples, int dim, std::size_t pairs = 20000,
                          std::uint64_t seed = 0);

}  // namespace sg
