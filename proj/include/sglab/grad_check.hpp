#pragma once

#include <functional>
#include <span>

#include "sglab/tensor.hpp"

namespace sg {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_input = 0;  // index into the checked tensors
  std::size_t worst_index = 0;  // flat element index within that tensor
  std::size_t coordinates = 0;
};

// Compares the reverse-mode gradient of a scalar function against central
// finite differences, coordinate by coordinate. The function is re-evaluated
// after perturbing each leaf in place, so it must rebuild its graph on every
// call. Relative error uses max(|analytic|, |numeric|, floor) as denominator;
// coordinates where both gradients sit below the floor are compared
// absolutely against it.
GradCheckResult grad_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                           double eps = 1e-4, double floor = 1e-6);

// Single-input convenience form: f(x).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-4);

}  // namespace sg
