#include "sglab/dataset.hpp"

#include <cmath>
#include <numbers>

#include "sglab/error.hpp"
#include "sglab/rng.hpp"

namespace sg {

DatasetInfo dataset_info(const std::string& name) {
  if (name == "gaussians8") return {name, 2, 8, TokenLayout::points, 0};
  if (name == "checkerboard") return {name, 2, 8, TokenLayout::points, 0};
  if (name == "two-moons") return {name, 2, 2, TokenLayout::points, 0};
  if (name == "toy-image") return {name, 64, 8, TokenLayout::image, 8};
  throw ConfigError("unknown dataset '" + name + "' (gaussians8|checkerboard|two-moons|toy-image)");
}

std::vector<std::string> dataset_names() { return {"gaussians8", "checkerboard", "two-moons", "toy-image"}; }

SampleSet make_dataset(const std::string& name, std::size_t n, std::uint64_t seed) {
  const DatasetInfo info = dataset_info(name);
  SampleSet out;
  out.dim = info.dim;
  out.values.resize(n * static_cast<std::size_t>(info.dim));
  out.conds.resize(n);
  Engine rng = substream(seed, Stream::dataset);
  const double pi = std::numbers::pi;
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i % static_cast<std::size_t>(info.num_classes));
    out.conds[i] = Condition::of(k);
    double* v = out.values.data() + i * static_cast<std::size_t>(info.dim);
    if (name == "gaussians8") {
      const double a = 2.0 * pi * k / 8.0;
      v[0] = kGaussians8Radius * std::cos(a) + kGaussians8Stddev * standard_normal(rng);
      v[1] = kGaussians8Radius * std::sin(a) + kGaussians8Stddev * standard_normal(rng);
    } else if (name == "checkerboard") {
      // Dark cells are those with (row + col) even; k indexes them row-major.
      const int row = k / 2;
      const int col = 2 * (k % 2) + (row % 2);
      v[0] = -2.0 + col + uniform01(rng);
      v[1] = -2.0 + row + uniform01(rng);
    } else if (name == "two-moons") {
      const double a = pi * uniform01(rng);
      if (k == 0) {
        v[0] = std::cos(a) - 0.5;
        v[1] = std::sin(a) - 0.25;
      } else {
        v[0] = 0.5 - std::cos(a);
        v[1] = 0.25 - std::sin(a);
      }
      v[0] += 0.05 * standard_normal(rng);
      v[1] += 0.05 * standard_normal(rng);
    } else {
      const int side = info.image_side;
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          v[y * side + x] = (y == k ? 1.0 : -1.0) + 0.1 * standard_normal(rng);
        }
      }
    }
  }
  return out;
}

}  // namespace sg
