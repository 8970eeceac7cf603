#pragma once

// Generated, class-labelled toy datasets. Sample i has label i % classes, so
// every set is balanced; values depend only on (name, n, seed).
//
//   gaussians8    8 isotropic modes on a radius-2 circle, mode k at angle 2 pi k / 8
//   checkerboard  the 8 dark cells of a 4x4 board on [-2, 2]^2, uniform inside
//   two-moons     two interleaved half circles with Gaussian jitter
//   toy-image     8x8 single-channel images with a bright bar at row k

#include <cstdint>
#include <string>
#include <vector>

#include "sglab/denoiser_config.hpp"
#include "sglab/sampler.hpp"

namespace sg {

struct DatasetInfo {
  std::string name;
  int dim = 0;
  int num_classes = 0;
  TokenLayout layout = TokenLayout::points;
  int image_side = 0;
};

DatasetInfo dataset_info(const std::string& name);
std::vector<std::string> dataset_names();

SampleSet make_dataset(const std::string& name, std::size_t n, std::uint64_t seed);

// Gaussians8 geometry, shared with tests.
inline constexpr double kGaussians8Radius = 2.0;
inline constexpr double kGaussians8Stddev = 0.15;

}  // namespace sg
