#include "sglab/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sglab/denoiser.hpp"
#include "sglab/error.hpp"

namespace sg::flow {

namespace {

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) throw DimensionError(std::string(op) + ": shapes differ");
}

void check_time(double t, const char* op) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError(std::string(op) + ": t outside [0, 1]");
}

std::vector<std::uint8_t> complement(const SparsityMask& m) {
  std::vector<std::uint8_t> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m.keep[i] ? 0 : 1;
  return out;
}

}  // namespace

void LossConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("loss.lambda must be >= 0");
  if (!(train_gamma >= 0.0 && train_gamma < 1.0)) throw ConfigError("loss.train_gamma must lie in [0, 1)");
  if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0)) throw ConfigError("loss.cond_dropout must lie in [0, 1]");
}

InterpolantSample make_interpolant(const Tensor& z, const Tensor& x, double t) {
  return {z, x, t, interpolate(z, x, t)};
}

Tensor interpolate(const Tensor& z, const Tensor& x, double t) {
  check_time(t, "interpolate");
  same_shape(z, x, "interpolate");
  auto zv = z.data();
  auto xv = x.data();
  std::vector<double> out(zv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * zv[i] + t * xv[i];
  return Tensor::from(z.shape(), std::move(out));
}

Tensor interpolate_rows(const Tensor& z, const Tensor& x, std::span<const double> times,
                        std::size_t rows_per_time) {
  same_shape(z, x, "interpolate_rows");
  if (z.rank() != 2 || times.size() * rows_per_time != z.rows()) {
    throw DimensionError("interpolate_rows: times do not cover the rows");
  }
  const std::size_t n = z.cols();
  auto zv = z.data();
  auto xv = x.data();
  std::vector<double> out(zv.size());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const double t = times[r / rows_per_time];
    check_time(t, "interpolate_rows");
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (1.0 - t) * zv[r * n + j] + t * xv[r * n + j];
  }
  return Tensor::from(z.shape(), std::move(out));
}

Tensor oracle_velocity(const Tensor& z, const Tensor& x) {
  same_shape(z, x, "oracle_velocity");
  auto zv = z.data();
  auto xv = x.data();
  std::vector<double> out(zv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] - zv[i];
  return Tensor::from(z.shape(), std::move(out));
}

Tensor reconstruct_from_velocity(const Tensor& x_t, double t, const Tensor& v) {
  check_time(t, "reconstruct_from_velocity");
  same_shape(x_t, v, "reconstruct_from_velocity");
  return add(x_t, scale(v, 1.0 - t));
}

Tensor fm_loss(const Tensor& v_pred, const Tensor& v_star, std::span<const std::uint8_t> visible_rows) {
  same_shape(v_pred, v_star, "fm_loss");
  const std::size_t rows = v_pred.rows();
  std::vector<double> w(rows, 1.0);
  std::size_t visible = rows;
  if (!visible_rows.empty()) {
    if (visible_rows.size() != rows) throw DimensionError("fm_loss: mask length must equal row count");
    visible = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      w[r] = visible_rows[r] ? 1.0 : 0.0;
      visible += visible_rows[r] ? 1 : 0;
    }
  }
  if (visible == 0) throw DegenerateMaskError("fm_loss: no visible tokens");
  for (auto& x : w) x /= static_cast<double>(visible);
  return weighted_row_sq_sum(sub(v_pred, v_star), w);
}

Tensor fm_loss(const Tensor& v_pred, const Tensor& v_star, const SparsityMask& visible) {
  return fm_loss(v_pred, v_star, std::span<const std::uint8_t>(visible.keep));
}

Tensor mae_aux_loss(const Tensor& v_pred, std::span<const double> row_times,
                    std::span<const std::uint8_t> masked_rows) {
  const std::size_t rows = v_pred.rows();
  if (masked_rows.size() != rows || row_times.size() != rows) {
    throw DimensionError("mae_aux_loss: mask and times must cover every row");
  }
  const std::size_t masked = static_cast<std::size_t>(std::count(masked_rows.begin(), masked_rows.end(), 1));
  if (masked == 0) return Tensor::scalar(0.0);
  std::vector<double> w(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    check_time(row_times[r], "mae_aux_loss");
    if (masked_rows[r]) w[r] = (1.0 - row_times[r]) * (1.0 - row_times[r]) / static_cast<double>(masked);
  }
  return weighted_row_sq_sum(v_pred, w);
}

Tensor mae_aux_loss(const Tensor& v_pred, double t, std::span<const std::uint8_t> masked_rows) {
  check_time(t, "mae_aux_loss");
  const std::vector<double> times(v_pred.rows(), t);
  return mae_aux_loss(v_pred, times, masked_rows);
}

Tensor mae_aux_loss(const Tensor& v_pred, double t, const SparsityMask& mask) {
  const auto masked = complement(mask);
  return mae_aux_loss(v_pred, t, masked);
}

Tensor mae_reconstruction_loss(const Tensor& denoised, const Tensor& anchor,
                               std::span<const std::uint8_t> masked_rows) {
  same_shape(denoised, anchor, "mae_reconstruction_loss");
  const std::size_t rows = denoised.rows();
  if (masked_rows.size() != rows) throw DimensionError("mae_reconstruction_loss: mask length");
  const std::size_t masked = static_cast<std::size_t>(std::count(masked_rows.begin(), masked_rows.end(), 1));
  if (masked == 0) return Tensor::scalar(0.0);
  std::vector<double> w(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) w[r] = masked_rows[r] ? 1.0 / static_cast<double>(masked) : 0.0;
  return weighted_row_sq_sum(sub(denoised, anchor), w);
}

SparsityMask fixed_count_mask(std::size_t tokens, double gamma, Engine& rng, std::size_t min_kept) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("fixed_count_mask: gamma outside [0, 1)");
  std::size_t keep = static_cast<std::size_t>(std::llround((1.0 - gamma) * static_cast<double>(tokens)));
  keep = std::clamp(keep, std::min(min_kept, tokens), tokens);
  std::vector<std::size_t> order(tokens);
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first `keep` entries form the kept subset.
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(uniform01(rng) * static_cast<double>(tokens - i));
    std::swap(order[i], order[std::min(j, tokens - 1)]);
  }
  SparsityMask m{std::vector<std::uint8_t>(tokens, 0), gamma};
  for (std::size_t i = 0; i < keep; ++i) m.keep[order[i]] = 1;
  return m;
}

LossBreakdown combined_loss(const Denoiser& model, const TrainBatch& batch, const LossConfig& cfg,
                            Engine& rng) {
  cfg.validate();
  const DenoiserConfig& mc = model.config();
  if (mc.sparsity == SparsityMode::route && cfg.lambda > 0.0) {
    throw ConfigError("combined_loss: routing models train without the auxiliary term (lambda must be 0)");
  }
  const std::size_t S = batch.conds.size();
  if (S == 0) throw DimensionError("combined_loss: empty batch");
  const auto rows = static_cast<std::size_t>(mc.state_rows());
  const auto T = static_cast<std::size_t>(mc.tokens());
  if (batch.x.rank() != 2 || batch.x.rows() != S * rows) throw DimensionError("combined_loss: batch shape");

  std::vector<double> times(S);
  for (auto& t : times) t = uniform01(rng);
  std::vector<double> zv(batch.x.numel());
  {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : zv) v = normal(rng);
  }
  Tensor z = Tensor::from(batch.x.shape(), std::move(zv));
  std::vector<Condition> conds = batch.conds;
  for (auto& c : conds) {
    if (uniform01(rng) < cfg.cond_dropout) c = Condition::null();
  }

  std::vector<SparsityMask> masks;
  const bool sparse = mc.sparsity != SparsityMode::dense && cfg.train_gamma > 0.0;
  std::size_t active = S * T;
  if (sparse) {
    masks.reserve(S);
    const std::size_t min_kept = 1;
    for (std::size_t s = 0; s < S; ++s) masks.push_back(fixed_count_mask(T, cfg.train_gamma, rng, min_kept));
    if (mc.sparsity == SparsityMode::route) {
      active = 0;
      for (const auto& m : masks) active += m.kept_count();
    }
  }

  Tensor x_t = interpolate_rows(z, batch.x, times, rows);
  Tensor v_star = oracle_velocity(z, batch.x);
  Tensor v_pred = model.forward(x_t, times, conds, masks);

  // Token-level supervision needs one output row per token (image layout).
  const bool token_rows = rows == T && mc.sparsity == SparsityMode::mask && sparse;
  LossBreakdown out;
  out.active_tokens = active;
  if (!token_rows) {
    out.total = fm_loss(v_pred, v_star);
    out.fm = out.total.item();
    return out;
  }
  std::vector<std::uint8_t> visible(S * T), hidden(S * T);
  std::vector<double> row_times(S * T);
  for (std::size_t s = 0; s < S; ++s) {
    for (std::size_t k = 0; k < T; ++k) {
      visible[s * T + k] = masks[s].keep[k];
      hidden[s * T + k] = masks[s].keep[k] ? 0 : 1;
      row_times[s * T + k] = times[s];
    }
  }
  Tensor fm = fm_loss(v_pred, v_star, visible);
  out.fm = fm.item();
  if (cfg.lambda == 0.0) {
    out.total = fm;
    return out;
  }
  Tensor aux = mae_aux_loss(v_pred, row_times, hidden);
  out.aux = aux.item();
  out.total = add(fm, scale(aux, cfg.lambda));
  return out;
}

}  // namespace sg::flow
