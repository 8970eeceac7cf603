#pragma once

#include <gtest/gtest.h>

#include <cstring>
#include <random>
#include <string>
#include <vector>

#include "sglab/log.hpp"
#include "sglab/tensor.hpp"

namespace sgtest {

// Collects warnings instead of printing them.
class WarningCapture {
 public:
  WarningCapture() {
    previous_ = sg::set_warning_handler([this](const std::string& m) { messages.push_back(m); });
  }
  ~WarningCapture() { sg::set_warning_handler(previous_); }
  std::vector<std::string> messages;

 private:
  sg::WarningHandler previous_;
};

inline sg::Tensor random_tensor(sg::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                                bool requires_grad = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(sg::shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return sg::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

inline bool bitwise_equal(const sg::Tensor& a, const sg::Tensor& b) {
  return a.shape() == b.shape() && bitwise_equal(a.data(), b.data());
}

}  // namespace sgtest
