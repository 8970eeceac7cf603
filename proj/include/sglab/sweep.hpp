#pragma once

// Grid evaluation over (gamma_strong, gamma_weak, omega). Each cell draws
// class-balanced samples, scores them against a held-out reference set and
// records the per-step cost. Cells run on a bounded worker pool; results
// are collected in grid order, so output does not depend on scheduling.

#include <filesystem>
#include <string>
#include <vector>

#include "sglab/config.hpp"
#include "sglab/sampler.hpp"

namespace sg {

enum class CellStatus { ok, diverged, inadmissible, baseline };
std::string to_string(CellStatus s);
CellStatus parse_cell_status(const std::string& s);

struct SweepRow {
  double gamma_strong = 0.0;
  double gamma_weak = 0.0;
  double omega = 1.0;
  double fd = 0.0;         // NaN unless status is ok or baseline
  double diversity = 0.0;  // NaN unless status is ok or baseline
  double flops_per_step = 0.0;
  bool diverged = false;
  std::uint64_t seed = 0;
  CellStatus status = CellStatus::ok;
  int diverged_step = -1;  // not written to CSV
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SampleSet reference;
  std::vector<SampleSet> samples;  // one per row; empty unless ok/baseline
};

// Guidance mode used for the grid: sg, cfg_sg or ag_sg (none maps to sg).
GuidanceMode sweep_mode(const GuidanceConfig& base);
// Whether a (gamma_strong, gamma_weak) pair may be evaluated in the mode.
bool cell_admissible(GuidanceMode mode, double gamma_strong, double gamma_weak);
// Cells that reduce exactly to unguided sampling; evaluated as mode none.
bool cell_is_baseline(GuidanceMode mode, double gamma_strong, double gamma_weak, double omega);

// Guidance for one cell: base with the cell's mode, omega and constant rates.
GuidanceConfig cell_guidance(const GuidanceConfig& base, double gamma_strong, double gamma_weak, double omega);

SampleSet sweep_reference(const ExperimentConfig& cfg);
// Metric named by sweep.metric, on the first fid_subset_size samples.
double sweep_metric(const ExperimentConfig& cfg, const SampleSet& generated, const SampleSet& reference);

SweepResult run_sweep(const ModelSet& models, const ExperimentConfig& cfg);

// Columns: gamma_strong,gamma_weak,omega,fd,diversity,flops_per_step,diverged,seed,status
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path);

}  // namespace sg
