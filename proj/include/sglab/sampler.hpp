#pragma once

// Euler ODE sampler for guided flow models. Each step evaluates the two
// guidance branches with freshly drawn Bernoulli token masks and integrates
// x <- x + dt * v. Random draws come from substreams keyed by
// (seed, sample index, step, branch), so a sample's trajectory does not
// depend on how samples are batched.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sglab/denoiser.hpp"
#include "sglab/guidance.hpp"
#include "sglab/rng.hpp"

namespace sg {

struct SamplerConfig {
  int num_steps = 40;
  std::uint64_t seed = 0;
  int batch_size = 256;

  void validate() const;
  // num_steps + 1 points, uniform from 0 to 1.
  std::vector<double> t_grid() const;
  // step / (num_steps - 1), or 0 for a single step.
  double step_fraction(int step) const;
};

struct ModelSet {
  const Denoiser* main = nullptr;
  const Denoiser* aux = nullptr;
};

// m_k ~ Bernoulli(1 - gamma) per token.
SparsityMask sample_mask(std::size_t tokens, double gamma, Engine& rng);

Tensor euler_step(const Tensor& x, const Tensor& v, double dt);

// Integrates dx/dt = field(x, t, step) over the uniform grid with Euler
// steps. Throws DivergenceError naming the step where x stops being finite.
using VelocityField = std::function<Tensor(const Tensor& x, double t, int step)>;
Tensor integrate_ode(const Tensor& x0, const VelocityField& field, int num_steps);

// Guided velocity for a batch at one step. sample_ids identify each row
// group's RNG substream; step is the step index used as key.
Tensor guided_velocity(const ModelSet& models, const Tensor& x_t, double t,
                       std::span<const Condition> conds, const GuidanceConfig& gcfg,
                       double step_fraction, std::uint64_t seed,
                       std::span<const std::uint64_t> sample_ids, int step);

// Convenience overload: single batch whose ids are 0..S-1, masks drawn from
// rng-derived substreams.
Tensor guided_velocity(const ModelSet& models, const Tensor& x_t, double t,
                       std::span<const Condition> conds, const GuidanceConfig& gcfg,
                       double step_fraction, Engine& rng);

struct SampleSet {
  int dim = 0;
  std::vector<double> values;  // n x dim, row-major in data space
  std::vector<Condition> conds;

  std::size_t size() const { return conds.size(); }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
};

// n samples with a single condition.
SampleSet generate(const ModelSet& models, std::size_t n, const Condition& cond,
                   const GuidanceConfig& gcfg, const SamplerConfig& scfg);
// One sample per entry of conds.
SampleSet generate(const ModelSet& models, std::span<const Condition> conds,
                   const GuidanceConfig& gcfg, const SamplerConfig& scfg);

// Flow state (rows x cols per sample) <-> flat data-space samples.
Tensor to_state(const DenoiserConfig& cfg, std::span<const double> flat, std::size_t n);
std::vector<double> from_state(const DenoiserConfig& cfg, const Tensor& state);

}  // namespace sg
