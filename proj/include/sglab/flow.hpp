#pragma once

// Straight-path flow matching: x_t = (1 - t) z + t x with constant oracle
// velocity x - z, plus the masked training objective. Token-restricted
// losses average squared row norms over their support so the auxiliary
// weight stays comparable across sparsity rates.

#include <cstdint>
#include <span>
#include <vector>

#include "sglab/denoiser_config.hpp"
#include "sglab/rng.hpp"
#include "sglab/tensor.hpp"

namespace sg {

class Denoiser;

namespace flow {

struct InterpolantSample {
  Tensor z;
  Tensor x;
  double t = 0.0;
  Tensor x_t;
};

struct LossConfig {
  double lambda = 0.1;       // auxiliary masked-reconstruction weight
  double train_gamma = 0.5;  // token drop rate during training
  double cond_dropout = 0.1; // probability a label is replaced by null
  void validate() const;
};

InterpolantSample make_interpolant(const Tensor& z, const Tensor& x, double t);

Tensor interpolate(const Tensor& z, const Tensor& x, double t);
// Row r of the result uses times[r / rows_per_time].
Tensor interpolate_rows(const Tensor& z, const Tensor& x, std::span<const double> times,
                        std::size_t rows_per_time);
Tensor oracle_velocity(const Tensor& z, const Tensor& x);
// Implied clean estimate x_t + (1 - t) v.
Tensor reconstruct_from_velocity(const Tensor& x_t, double t, const Tensor& v);

// Mean over visible rows of ||v_pred - v_star||^2. An empty span means all
// rows are visible.
Tensor fm_loss(const Tensor& v_pred, const Tensor& v_star,
               std::span<const std::uint8_t> visible_rows = {});
Tensor fm_loss(const Tensor& v_pred, const Tensor& v_star, const SparsityMask& visible);

// (1 - t)^2 * mean over masked rows of ||v_pred||^2; zero when nothing is
// masked. Rows flagged 1 in masked_rows are the hidden tokens.
Tensor mae_aux_loss(const Tensor& v_pred, double t, std::span<const std::uint8_t> masked_rows);
Tensor mae_aux_loss(const Tensor& v_pred, double t, const SparsityMask& mask);
// Per-row times, for batches mixing several t.
Tensor mae_aux_loss(const Tensor& v_pred, std::span<const double> row_times,
                    std::span<const std::uint8_t> masked_rows);

// Reconstruction form of the auxiliary term: mean over masked rows of
// ||denoised - anchor||^2. With denoised = reconstruct_from_velocity(x_t, t, v)
// and anchor = x_t it equals the velocity form above.
Tensor mae_reconstruction_loss(const Tensor& denoised, const Tensor& anchor,
                               std::span<const std::uint8_t> masked_rows);

struct TrainBatch {
  Tensor x;                      // (S * state_rows) x state_cols
  std::vector<Condition> conds;  // S labels
};

struct LossBreakdown {
  Tensor total;
  double fm = 0.0;
  double aux = 0.0;
  std::size_t active_tokens = 0;  // tokens processed inside the model span
};

// One stochastic evaluation of fm + lambda * aux: draws t ~ U[0, 1], z ~ N(0, I),
// label dropout, and one fixed-count token subset per sample (reused by both
// terms). Routing models must use lambda = 0.
LossBreakdown combined_loss(const Denoiser& model, const TrainBatch& batch, const LossConfig& cfg,
                            Engine& rng);

// Exactly round((1 - gamma) * tokens) kept, uniformly chosen.
SparsityMask fixed_count_mask(std::size_t tokens, double gamma, Engine& rng, std::size_t min_kept = 0);

}  // namespace flow
}  // namespace sg
