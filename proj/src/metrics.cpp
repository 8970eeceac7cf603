#include "sglab/metrics.hpp"

#include <cmath>
#include <map>

#include "sglab/error.hpp"
#include "sglab/rng.hpp"

namespace sg {

namespace {

constexpr double kNegativeEigenTolerance = 1e-9;

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m, const char* what) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -kNegativeEigenTolerance * scale) {
      throw DomainError(std::string(what) + " is not positive semi-definite (eigenvalue " +
                        std::to_string(ev[i]) + ")");
    }
    ev[i] = std::sqrt(std::max(ev[i], 0.0));
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

GaussianSummary gaussian_fit(std::span<const double> samples, int dim) {
  if (dim < 1) throw DimensionError("gaussian_fit: dim must be >= 1");
  const auto d = static_cast<std::size_t>(dim);
  if (samples.size() % d != 0) throw DimensionError("gaussian_fit: size is not a multiple of dim");
  const std::size_t n = samples.size() / d;
  if (n < 2) throw DomainError("gaussian_fit: need at least two samples");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
      samples.data(), static_cast<Eigen::Index>(n), dim);
  GaussianSummary g;
  g.count = n;
  g.mean = X.colwise().mean().transpose();
  const Eigen::MatrixXd centered = X.rowwise() - g.mean.transpose();
  g.covariance = centered.transpose() * centered / static_cast<double>(n - 1);
  return g;
}

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.mean.size() != b.mean.size() || a.covariance.rows() != b.covariance.rows() ||
      a.covariance.rows() != a.mean.size()) {
    throw DimensionError("frechet_distance: dimension mismatch");
  }
  const Eigen::MatrixXd ra = psd_sqrt(a.covariance, "covariance a");
  psd_sqrt(b.covariance, "covariance b");
  const Eigen::MatrixXd inner = ra * b.covariance * ra;
  const Eigen::MatrixXd root = psd_sqrt(inner, "covariance product");
  const double mean_term = (a.mean - b.mean).squaredNorm();
  return mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * root.trace();
}

namespace {

std::map<std::size_t, std::vector<double>> by_class(const SampleSet& s) {
  std::map<std::size_t, std::vector<double>> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s.conds[i].is_null()) continue;
    auto r = s.row(i);
    auto& v = out[s.conds[i].label];
    v.insert(v.end(), r.begin(), r.end());
  }
  return out;
}

}  // namespace

double class_conditional_fd(const SampleSet& generated, const SampleSet& reference) {
  if (generated.dim != reference.dim) throw DimensionError("class_conditional_fd: dimension mismatch");
  const auto gen = by_class(generated);
  const auto ref = by_class(reference);
  const auto d = static_cast<std::size_t>(generated.dim);
  double sum = 0.0;
  int classes = 0;
  for (const auto& [label, values] : gen) {
    auto it = ref.find(label);
    if (it == ref.end() || values.size() < 2 * d || it->second.size() < 2 * d) continue;
    sum += frechet_distance(gaussian_fit(values, generated.dim), gaussian_fit(it->second, reference.dim));
    ++classes;
  }
  if (classes == 0) throw DomainError("class_conditional_fd: no class with two samples in both sets");
  return sum / classes;
}

double pooled_fd(const SampleSet& generated, const SampleSet& reference) {
  if (generated.dim != reference.dim) throw DimensionError("pooled_fd: dimension mismatch");
  return frechet_distance(gaussian_fit(generated.values, generated.dim),
                          gaussian_fit(reference.values, reference.dim));
}

double pairwise_diversity(std::span<const double> samples, int dim, std::size_t pairs, std::uint64_t seed) {
  if (dim < 1) throw DimensionError("pairwise_diversity: dim must be >= 1");
  const auto d = static_cast<std::size_t>(dim);
  if (samples.size() % d != 0) throw DimensionError("pairwise_diversity: size is not a multiple of dim");
  const std::size_t n = samples.size() / d;
  if (n < 2) throw DomainError("pairwise_diversity: need at least two samples");
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double diff = samples[i * d + k] - samples[j * d + k];
      s += diff * diff;
    }
    return std::sqrt(s);
  };
  const double all = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  if (pairs == 0) throw DomainError("pairwise_diversity: pairs must be positive");
  double sum = 0.0;
  if (all <= static_cast<double>(pairs)) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) sum += dist(i, j);
    return sum / all;
  }
  Engine rng = substream(seed, Stream::pairing, {});
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  for (std::size_t p = 0; p < pairs; ++p) {
    std::size_t i = pick(rng), j = pick(rng);
    while (j == i) j = pick(rng);
    sum += dist(i, j);
  }
  return sum / static_cast<double>(pairs);
}

}  // namespace sg
