#pragma once

// Run directories:
//   manifest.txt   subcommand, command line, seed, version, timestamps, rerun line
//   config.txt     the fully resolved configuration
//   checkpoints/   iter_<NNNNNNNN>.sglb
//   samples/       generated sample CSVs
//   sweep.csv, flops.csv, train_log.csv

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "sglab/checkpoint.hpp"
#include "sglab/config.hpp"

namespace sg {

std::string git_describe();
std::string utc_timestamp();

struct Manifest {
  std::string subcommand;
  std::string command;
  std::uint64_t seed = 0;
  std::string started;
  std::string finished;
  std::vector<std::pair<std::string, std::string>> extra;
};

void write_manifest(const std::filesystem::path& dir, const Manifest& m);
std::map<std::string, std::string> read_manifest(const std::filesystem::path& dir);

// Writes config.txt.
void write_run_config(const std::filesystem::path& dir, const ExperimentConfig& cfg);

std::filesystem::path checkpoint_path(const std::filesystem::path& run, std::uint64_t iteration);
// Checkpoint files of a run, ascending by iteration.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& run);

// Resolves a checkpoint reference relative to a training run:
//   "final" or ""   the last checkpoint
//   "early"         the earliest checkpoint after initialisation
//   "init"          the iteration-0 checkpoint
//   anything else   a file path
std::filesystem::path resolve_checkpoint(const std::filesystem::path& run, const std::string& ref);

}  // namespace sg
