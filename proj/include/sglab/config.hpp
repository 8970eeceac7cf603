#pragma once

// Experiment configuration and its flat text form:
//
//   # comment
//   denoiser.num_layers = 6
//   sweep.omega = 1.3, 1.5, 1.7, 1.9
//
// Every field has exactly one key; serialize_config writes all of them, so a
// written config fully determines a run.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sglab/denoiser_config.hpp"
#include "sglab/flow.hpp"
#include "sglab/guidance.hpp"
#include "sglab/sampler.hpp"

namespace sg {

struct OptimConfig {
  double lr = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double grad_clip = 1.0;  // global norm; 0 disables
  int warmup = 0;          // linear warmup iterations
  int iterations = 2000;
  int batch = 128;
};

struct TrainConfig {
  // Fractions of the iteration budget at which checkpoints are written;
  // the final iterate is always written as well.
  std::vector<double> checkpoint_fractions{0.1};
  int log_every = 50;
  std::string init;  // checkpoint to start from (finetuning); empty = fresh init
};

struct SampleConfig {
  std::size_t n = 512;
  // "balanced" cycles through the classes, "null" is unconditional, or a
  // class index.
  std::string label = "balanced";
};

struct SweepConfig {
  std::vector<double> gamma_strong{0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<double> gamma_weak{0.0, 0.2, 0.4, 0.6, 0.8};
  std::vector<double> omega{1.3, 1.5, 1.7, 1.9};
  std::size_t samples_per_cell = 512;
  std::size_t reference_size = 4096;
  std::size_t fid_subset_size = 0;  // 0 = all samples of the cell
  std::string metric = "class-fd";  // or "fd" (pooled)
  std::size_t diversity_pairs = 20000;
  int workers = 1;
  bool distinct_seeds = false;      // false: every cell shares sampler.seed
  bool write_samples = true;
};

// Where pretrained models come from.
struct InputConfig {
  std::string run;         // training run directory
  std::string checkpoint;  // explicit main checkpoint; overrides run
};

struct ExperimentConfig {
  std::string name = "desk";
  std::uint64_t seed = 0;
  std::string dataset = "gaussians8";
  DenoiserConfig denoiser = desk_preset();
  flow::LossConfig loss{};
  OptimConfig optim{};
  TrainConfig train{};
  GuidanceConfig guidance{};
  SamplerConfig sampler{};
  SampleConfig sample{};
  SweepConfig sweep{};
  InputConfig input{};

  // Copies the dataset's layout, dimension and class count into denoiser.
  void resolve();
  void validate() const;
};

// Sets one key. Throws ConfigError for unknown keys or unparsable values.
// guidance.preset and denoiser.preset expand into their fields.
void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ExperimentConfig& cfg, const std::string& key);
std::vector<std::string> config_keys();

std::string serialize_config(const ExperimentConfig& cfg);
// Applies the lines of text on top of base.
ExperimentConfig parse_config(const std::string& text, ExperimentConfig base = {});
ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {});

// Parses "key=value" (used by --set).
void apply_override(ExperimentConfig& cfg, const std::string& assignment);

// Numeric text helpers shared by the CSV and config code. Doubles are
// written with 17 significant digits so they read back bit-exactly.
std::string format_double(double v);
double parse_double(const std::string& s, const std::string& what);
std::vector<double> parse_double_list(const std::string& s, const std::string& what);

}  // namespace sg
