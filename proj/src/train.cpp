#include "sglab/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sglab/cost_model.hpp"
#include "sglab/dataset.hpp"
#include "sglab/error.hpp"
#include "sglab/log.hpp"
#include "sglab/rng.hpp"

namespace sg {

std::vector<int> checkpoint_iterations(const std::vector<double>& fractions, int total) {
  std::vector<int> its;
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("checkpoint fractions must lie in (0, 1]");
    its.push_back(static_cast<int>(std::floor(f * total)));
  }
  its.push_back(total);
  std::sort(its.begin(), its.end());
  its.erase(std::unique(its.begin(), its.end()), its.end());
  return its;
}

double AdamW::step(ParameterSet& params, double lr) {
  if (m_.empty()) {
    for (const auto& [name, t] : params) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }
  double sq = 0.0;
  for (const auto& [name, t] : params) {
    for (double g : t.grad_view()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip = cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  std::size_t i = 0;
  for (auto& [name, t] : params) {
    auto g = t.grad_view();
    auto w = t.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    ++i;
    if (g.empty()) continue;
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k] * clip;
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[k]);
    }
  }
  return norm;
}

namespace {

// Stream keys for the per-iteration training data.
constexpr std::uint64_t kTrainData = 0x7D47A;

flow::TrainBatch batch_from(const SampleSet& data, const DenoiserConfig& mc) {
  return {to_state(mc, data.values, data.size()), data.conds};
}

std::string engine_state(const Engine& rng) {
  std::ostringstream o;
  o << rng;
  return o.str();
}

}  // namespace

double evaluation_loss(const Denoiser& model, const ExperimentConfig& cfg, std::size_t n, std::uint64_t seed) {
  NoGradGuard no_record;
  const SampleSet data = make_dataset(cfg.dataset, n, derive_seed(cfg.seed, {kTrainData, seed}));
  flow::LossConfig lc;
  lc.lambda = 0.0;
  lc.train_gamma = 0.0;
  lc.cond_dropout = 0.0;
  Engine rng = substream(seed, Stream::train);
  return flow::combined_loss(model, batch_from(data, model.config()), lc, rng).total.item();
}

TrainResult train(const ExperimentConfig& cfg_in, const TrainHooks& hooks) {
  ExperimentConfig cfg = cfg_in;
  cfg.resolve();
  cfg.validate();
  flow::LossConfig loss_cfg = cfg.loss;
  if (cfg.denoiser.sparsity == SparsityMode::route && loss_cfg.lambda > 0.0) {
    warn("routing models train without the auxiliary loss; using loss.lambda = 0");
    loss_cfg.lambda = 0.0;
  }

  Denoiser model(cfg.denoiser, cfg.seed);
  if (!cfg.train.init.empty()) {
    const Checkpoint init = load_checkpoint(cfg.train.init);
    if (!(init.config == cfg.denoiser)) {
      throw ConfigError("train.init checkpoint architecture differs from the configured denoiser");
    }
    load_parameters(model, init.parameters);
  }

  TrainResult result;
  result.initial_eval_loss = evaluation_loss(model, cfg);
  Engine rng = substream(cfg.seed, Stream::train);
  const int total = cfg.optim.iterations;
  const std::vector<int> marks = checkpoint_iterations(cfg.train.checkpoint_fractions, total);
  std::size_t next_mark = 0;
  auto emit = [&](int iteration) {
    result.checkpoints.push_back(make_checkpoint(model, static_cast<std::uint64_t>(iteration), engine_state(rng)));
    if (hooks.on_checkpoint) hooks.on_checkpoint(result.checkpoints.back());
  };
  while (next_mark < marks.size() && marks[next_mark] == 0) {
    emit(0);
    ++next_mark;
  }

  const double gamma = cfg.denoiser.sparsity == SparsityMode::dense ? 0.0 : loss_cfg.train_gamma;
  const double batch_flops = cfg.optim.batch * forward_flops(cfg.denoiser, gamma);

  AdamW opt(cfg.optim);
  TrainLogRow acc;
  int in_interval = 0;
  for (int it = 0; it < total; ++it) {
    const SampleSet data =
        make_dataset(cfg.dataset, static_cast<std::size_t>(cfg.optim.batch), derive_seed(cfg.seed, {kTrainData, static_cast<std::uint64_t>(it)}));
    model.parameters().zero_grad();
    const flow::LossBreakdown lb = flow::combined_loss(model, batch_from(data, model.config()), loss_cfg, rng);
    const double loss = lb.total.item();
    if (!std::isfinite(loss)) {
      throw NumericError("non-finite loss at iteration " + std::to_string(it));
    }
    lb.total.backward();
    const double lr = cfg.optim.warmup > 0 && it < cfg.optim.warmup
                          ? cfg.optim.lr * static_cast<double>(it + 1) / cfg.optim.warmup
                          : cfg.optim.lr;
    opt.step(model.parameters(), lr);

    acc.loss += loss;
    acc.fm += lb.fm;
    acc.aux += lb.aux;
    acc.active_tokens = lb.active_tokens;
    ++in_interval;
    if ((it + 1) % cfg.train.log_every == 0 || it + 1 == total) {
      TrainLogRow row;
      row.iteration = it + 1;
      row.loss = acc.loss / in_interval;
      row.fm = acc.fm / in_interval;
      row.aux = acc.aux / in_interval;
      row.active_tokens = acc.active_tokens;
      row.forward_flops = batch_flops;
      result.log.push_back(row);
      if (hooks.on_log) hooks.on_log(row);
      acc = {};
      in_interval = 0;
    }
    while (next_mark < marks.size() && marks[next_mark] == it + 1) {
      emit(it + 1);
      ++next_mark;
    }
  }
  result.final_eval_loss = evaluation_loss(model, cfg);
  return result;
}

}  // namespace sg
