#include "sglab/sampler.hpp"

#include <cmath>
#include <numeric>

#include "sglab/error.hpp"
#include "sglab/flow.hpp"
#include "sglab/log.hpp"

namespace sg {

void SamplerConfig::validate() const {
  if (num_steps < 1) throw ConfigError("sampler.steps must be >= 1");
  if (batch_size < 1) throw ConfigError("sampler.batch must be >= 1");
}

std::vector<double> SamplerConfig::t_grid() const {
  std::vector<double> g(static_cast<std::size_t>(num_steps) + 1);
  for (int k = 0; k <= num_steps; ++k) g[static_cast<std::size_t>(k)] = static_cast<double>(k) / num_steps;
  return g;
}

double SamplerConfig::step_fraction(int step) const {
  return num_steps == 1 ? 0.0 : static_cast<double>(step) / (num_steps - 1);
}

SparsityMask sample_mask(std::size_t tokens, double gamma, Engine& rng) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("sample_mask: gamma outside [0, 1)");
  SparsityMask m{std::vector<std::uint8_t>(tokens), gamma};
  const double keep_p = 1.0 - gamma;
  for (auto& k : m.keep) k = uniform01(rng) < keep_p ? 1 : 0;
  return m;
}

Tensor euler_step(const Tensor& x, const Tensor& v, double dt) {
  if (!(dt > 0.0)) throw DomainError("euler_step: dt must be positive");
  return add(x, scale(v, dt));
}

Tensor integrate_ode(const Tensor& x0, const VelocityField& field, int num_steps) {
  if (num_steps < 1) throw ConfigError("integrate_ode: need at least one step");
  Tensor x = x0;
  for (int k = 0; k < num_steps; ++k) {
    const double t0 = static_cast<double>(k) / num_steps;
    const double t1 = static_cast<double>(k + 1) / num_steps;
    x = euler_step(x, field(x, t0, k), t1 - t0);
    for (double v : x.data()) {
      if (!std::isfinite(v)) {
        throw DivergenceError("sampler diverged at step " + std::to_string(k), k);
      }
    }
  }
  return x;
}

namespace {

const Denoiser& pick(const ModelSet& models, ModelRole role) {
  const Denoiser* m = role == ModelRole::main ? models.main : models.aux;
  if (!m) {
    throw ConfigError(role == ModelRole::main ? "sampler: no main model" : "sampler: auxiliary model required");
  }
  return *m;
}

Tensor branch_forward(const Denoiser& model, const BranchSpec& branch, const Tensor& x_t, double t,
                      std::span<const Condition> conds, std::uint64_t seed,
                      std::span<const std::uint64_t> ids, int step, std::uint64_t stream,
                      bool fixed_count) {
  const std::size_t S = conds.size();
  const std::vector<double> times(S, t);
  std::vector<Condition> used(conds.begin(), conds.end());
  if (branch.condition == CondUse::null) used.assign(S, Condition::null());
  std::vector<SparsityMask> masks;
  const auto& mc = model.config();
  if (branch.gamma > 0.0 && mc.sparsity != SparsityMode::dense) {
    masks.reserve(S);
    const auto T = static_cast<std::size_t>(mc.tokens());
    for (std::size_t s = 0; s < S; ++s) {
      Engine rng = substream(seed, Stream::mask, {ids[s], static_cast<std::uint64_t>(step), stream});
      const bool route = mc.sparsity == SparsityMode::route;
      if (fixed_count) {
        masks.push_back(flow::fixed_count_mask(T, branch.gamma, rng, route ? 1 : 0));
        continue;
      }
      SparsityMask m = sample_mask(T, branch.gamma, rng);
      // A route needs at least one token to carry through its span; redraw
      // from the same substream, i.e. sample conditioned on a nonempty set.
      while (route && m.kept_count() == 0) m = sample_mask(T, branch.gamma, rng);
      masks.push_back(std::move(m));
    }
  }
  return model.forward(x_t, times, used, masks);
}

}  // namespace

Tensor guided_velocity(const ModelSet& models, const Tensor& x_t, double t,
                       std::span<const Condition> conds, const GuidanceConfig& gcfg,
                       double step_fraction, std::uint64_t seed,
                       std::span<const std::uint64_t> sample_ids, int step) {
  if (sample_ids.size() != conds.size()) throw DimensionError("guided_velocity: one id per sample");
  const BranchPair branches = resolve_branches(gcfg, step_fraction);
  NoGradGuard no_record;
  const Tensor strong = branch_forward(pick(models, branches.strong.model), branches.strong, x_t, t, conds,
                                       seed, sample_ids, step, 0, gcfg.fixed_count_masks);
  if (!is_two_branch(gcfg.mode)) return strong;
  const Tensor weak = branch_forward(pick(models, branches.weak.model), branches.weak, x_t, t, conds, seed,
                                     sample_ids, step, gcfg.shared_mask ? 0 : 1, gcfg.fixed_count_masks);
  if (gcfg.mode == GuidanceMode::cfg) return cfg_combine(strong, weak, gcfg.omega);
  return sg_combine(strong, weak, gcfg.omega);
}

Tensor guided_velocity(const ModelSet& models, const Tensor& x_t, double t,
                       std::span<const Condition> conds, const GuidanceConfig& gcfg,
                       double step_fraction, Engine& rng) {
  std::vector<std::uint64_t> ids(conds.size());
  std::iota(ids.begin(), ids.end(), std::uint64_t{0});
  return guided_velocity(models, x_t, t, conds, gcfg, step_fraction, rng(), ids, 0);
}

// ---- state layout ------------------------------------------------------------

Tensor to_state(const DenoiserConfig& cfg, std::span<const double> flat, std::size_t n) {
  const auto dim = static_cast<std::size_t>(cfg.sample_dim());
  if (flat.size() != n * dim) throw DimensionError("to_state: expected n * sample_dim values");
  const auto rows = static_cast<std::size_t>(cfg.state_rows());
  const auto cols = static_cast<std::size_t>(cfg.state_cols());
  if (cfg.layout == TokenLayout::points) {
    return Tensor::from({n, cols}, std::vector<double>(flat.begin(), flat.end()));
  }
  const int side = cfg.image_side, p = cfg.patch_size, per_side = side / p;
  std::vector<double> out(n * rows * cols);
  for (std::size_t s = 0; s < n; ++s) {
    const double* img = flat.data() + s * dim;
    for (int c = 0; c < cfg.channels; ++c) {
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          const std::size_t token = static_cast<std::size_t>((y / p) * per_side + x / p);
          const std::size_t col = static_cast<std::size_t>((c * p + y % p) * p + x % p);
          out[(s * rows + token) * cols + col] = img[(c * side + y) * side + x];
        }
      }
    }
  }
  return Tensor::from({n * rows, cols}, std::move(out));
}

std::vector<double> from_state(const DenoiserConfig& cfg, const Tensor& state) {
  const auto dim = static_cast<std::size_t>(cfg.sample_dim());
  const std::size_t n = state.numel() / dim;
  if (cfg.layout == TokenLayout::points) return {state.data().begin(), state.data().end()};
  const auto rows = static_cast<std::size_t>(cfg.state_rows());
  const auto cols = static_cast<std::size_t>(cfg.state_cols());
  const int side = cfg.image_side, p = cfg.patch_size, per_side = side / p;
  auto sv = state.data();
  std::vector<double> out(n * dim);
  for (std::size_t s = 0; s < n; ++s) {
    double* img = out.data() + s * dim;
    for (int c = 0; c < cfg.channels; ++c) {
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          const std::size_t token = static_cast<std::size_t>((y / p) * per_side + x / p);
          const std::size_t col = static_cast<std::size_t>((c * p + y % p) * p + x % p);
          img[(c * side + y) * side + x] = sv[(s * rows + token) * cols + col];
        }
      }
    }
  }
  return out;
}

// ---- generation -----------------------------------------------------------------

SampleSet generate(const ModelSet& models, std::size_t n, const Condition& cond,
                   const GuidanceConfig& gcfg, const SamplerConfig& scfg) {
  const std::vector<Condition> conds(n, cond);
  return generate(models, conds, gcfg, scfg);
}

SampleSet generate(const ModelSet& models, std::span<const Condition> conds,
                   const GuidanceConfig& gcfg, const SamplerConfig& scfg) {
  scfg.validate();
  gcfg.validate();
  const Denoiser& main = pick(models, ModelRole::main);
  if (uses_aux_model(gcfg.mode)) pick(models, ModelRole::auxiliary);
  const DenoiserConfig& mc = main.config();
  if (mc.sparsity == SparsityMode::dense &&
      (gcfg.schedule_strong.start_value > 0 || gcfg.schedule_strong.end_value > 0 ||
       gcfg.schedule_weak.start_value > 0 || gcfg.schedule_weak.end_value > 0) &&
      is_sparse_family(gcfg.mode)) {
    warn("main model was trained dense; sparsity rates have no effect on it");
  }
  const auto dim = static_cast<std::size_t>(mc.sample_dim());
  SampleSet out;
  out.dim = mc.sample_dim();
  out.conds.assign(conds.begin(), conds.end());
  out.values.reserve(conds.size() * dim);
  NoGradGuard no_record;
  const auto batch = static_cast<std::size_t>(scfg.batch_size);
  for (std::size_t begin = 0; begin < conds.size(); begin += batch) {
    const std::size_t count = std::min(batch, conds.size() - begin);
    std::vector<std::uint64_t> ids(count);
    std::iota(ids.begin(), ids.end(), static_cast<std::uint64_t>(begin));
    std::vector<double> prior(count * dim);
    for (std::size_t s = 0; s < count; ++s) {
      Engine rng = substream(scfg.seed, Stream::prior, {ids[s]});
      std::normal_distribution<double> normal(0.0, 1.0);
      for (std::size_t j = 0; j < dim; ++j) prior[s * dim + j] = normal(rng);
    }
    const Tensor z = to_state(mc, prior, count);
    const auto chunk = conds.subspan(begin, count);
    const Tensor x = integrate_ode(
        z,
        [&](const Tensor& xt, double t, int step) {
          return guided_velocity(models, xt, t, chunk, gcfg, scfg.step_fraction(step), scfg.seed, ids, step);
        },
        scfg.num_steps);
    const auto flat = from_state(mc, x);
    out.values.insert(out.values.end(), flat.begin(), flat.end());
  }
  return out;
}

}  // namespace sg
