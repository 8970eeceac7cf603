#pragma once

// Binary checkpoint files (.sglb), little-endian:
//   "SGLB", u32 version, u32 config length + config text, u64 iteration,
//   u32 rng length + rng text, u32 tensor count, then per tensor
//   u32 name length + name, u32 rank, u64 dims..., raw f64 values.
// Doubles are stored as their bit patterns, so a round trip is exact.

#include <cstdint>
#include <filesystem>
#include <string>

#include "sglab/denoiser.hpp"

namespace sg {

struct Checkpoint {
  DenoiserConfig config;
  ParameterSet parameters;
  std::uint64_t iteration = 0;
  std::string rng_state;  // textual std::mt19937_64 state of the trainer
};

Checkpoint make_checkpoint(const Denoiser& model, std::uint64_t iteration, const std::string& rng_state = {});
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Model with the checkpoint's architecture and parameters.
Denoiser model_from_checkpoint(const Checkpoint& ckpt);
// Copies values into model; names and shapes must match.
void load_parameters(Denoiser& model, const ParameterSet& params);

// Config text blocks used inside checkpoints (key = value lines).
std::string serialize_denoiser_config(const DenoiserConfig& cfg);
DenoiserConfig parse_denoiser_config(const std::string& text);

}  // namespace sg
