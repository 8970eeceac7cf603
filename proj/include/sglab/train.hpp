#pragma once

// Training loop: AdamW on the flow-matching objective with checkpoints at
// fixed fractions of the iteration budget.

#include <functional>
#include <vector>

#include "sglab/checkpoint.hpp"
#include "sglab/config.hpp"

namespace sg {

struct TrainLogRow {
  int iteration = 0;       // updates completed when the interval closed
  double loss = 0.0;       // mean training loss over the interval
  double fm = 0.0;
  double aux = 0.0;
  std::size_t active_tokens = 0;  // tokens entering the sparse span, last batch
  double forward_flops = 0.0;     // expected per-batch forward cost (mac convention)
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;  // ascending iteration
  std::vector<TrainLogRow> log;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
};

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_log;
  std::function<void(const Checkpoint&)> on_checkpoint;
};

// floor(f * total) for each fraction, plus total; sorted and unique.
std::vector<int> checkpoint_iterations(const std::vector<double>& fractions, int total);

// Loss of the dense(ified) objective on a fixed batch with fixed noise:
// the same value for the same model and seed, used to track progress.
double evaluation_loss(const Denoiser& model, const ExperimentConfig& cfg, std::size_t n = 1024,
                       std::uint64_t seed = 0xE7A1);

// Adam with decoupled weight decay.
class AdamW {
 public:
  explicit AdamW(const OptimConfig& cfg) : cfg_(cfg) {}
  // Applies one update from the accumulated gradients; returns the global
  // gradient norm before clipping.
  double step(ParameterSet& params, double lr);
  int steps() const { return t_; }

 private:
  OptimConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

TrainResult train(const ExperimentConfig& cfg, const TrainHooks& hooks = {});

}  // namespace sg
