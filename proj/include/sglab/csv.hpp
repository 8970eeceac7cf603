#pragma once

// CSV files written by the harness. Numbers use 17 significant digits.
//   samples:  label,x0,x1,...   (label is a class index or "null")

#include <filesystem>

#include "sglab/sampler.hpp"

namespace sg {

void write_samples_csv(const std::filesystem::path& path, const SampleSet& samples);
SampleSet read_samples_csv(const std::filesystem::path& path);

// First n rows of a set.
SampleSet take_rows(const SampleSet& s, std::size_t n);

}  // namespace sg
