#include "sglab/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sglab/error.hpp"

namespace sg {

namespace {

double finite_value(const Tensor& t) {
  const double v = t.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves, double eps,
                           double floor) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) {
    throw DomainError("grad_check: eps must lie in [1e-6, 1e-3], got " + std::to_string(eps));
  }
  for (auto& leaf : leaves) {
    if (!leaf.is_leaf() || !leaf.requires_grad()) {
      throw DimensionError("grad_check: inputs must be leaves requiring grad");
    }
    leaf.zero_grad();
  }
  Tensor y = f();
  finite_value(y);
  y.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) analytic.push_back(leaf.grad());

  GradCheckResult result;
  NoGradGuard no_record;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto values = leaves[li].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = finite_value(f());
      values[i] = saved - eps;
      const double down = finite_value(f());
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[li][i];
      if (!std::isfinite(a)) throw NumericError("grad_check: analytic gradient is not finite");
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_relative_error) {
        result.max_relative_error = rel;
        result.worst_input = li;
        result.worst_index = i;
      }
    }
  }
  for (auto& leaf : leaves) leaf.zero_grad();
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  Tensor leaf = x;
  if (!x.is_leaf() || !x.requires_grad()) {
    leaf = Tensor::from(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true);
  }
  Tensor leaves[] = {leaf};
  return grad_check([&] { return f(leaf); }, leaves, eps).max_relative_error;
}

}  // namespace sg
