#pragma once

// Token-transformer velocity model with three structural sparsity modes:
//   dense  - every token through every layer;
//   mask   - dropped tokens are replaced by a learned e_mask embedding before
//            the first layer and never see their own input again;
//   route  - dropped tokens skip layers route.start..route.end and re-enter
//            unchanged after route.end.
// Blocks are pre-RMSNorm attention + GELU MLP with per-sample shift/scale/
// gate modulation derived from the time and class embeddings. Rotary
// positions always use a token's original index, so routed subsets keep
// their geometry.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sglab/denoiser_config.hpp"
#include "sglab/tensor.hpp"

namespace sg {

// Ordered, named parameter tensors. Copies are deep.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet& other);
  ParameterSet& operator=(const ParameterSet& other);
  ParameterSet(ParameterSet&&) noexcept = default;
  ParameterSet& operator=(ParameterSet&&) noexcept = default;

  void add(std::string name, Tensor value);
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t value_count() const;
  void zero_grad();

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Tokens of a batch, grouped per sample: rows [offsets[s], offsets[s+1])
// belong to sample s and sit at original grid indices positions[row].
struct TokenBatch {
  Tensor tokens;
  std::vector<int> positions;
  std::vector<std::size_t> offsets;

  std::size_t samples() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::vector<std::size_t> counts() const;
};

// Optional instrumentation of a forward pass.
struct ActivationTrace {
  std::vector<Tensor> layer_inputs;  // full token matrix entering each layer
                                     // (kept rows only inside a route)
  Tensor route_entry;                // all tokens entering route.start
  Tensor route_exit;                 // all tokens after reinsertion
  std::vector<std::size_t> dropped_rows;  // rows of route_entry that bypassed
  Tensor final_tokens;               // all tokens entering the output head
};

class Denoiser {
 public:
  explicit Denoiser(DenoiserConfig config, std::uint64_t seed = 0);

  const DenoiserConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }

  // state: (S * state_rows) x state_cols. times and conds hold S entries;
  // masks is empty (dense) or S masks of tokens() flags. Returns the
  // velocity in the same layout as state.
  Tensor forward(const Tensor& state, std::span<const double> times,
                 std::span<const Condition> conds,
                 std::span<const SparsityMask> masks = {},
                 ActivationTrace* trace = nullptr) const;

  // S x d rows; the null condition uses the dedicated last table row.
  Tensor embed_condition(std::span<const Condition> conds) const;
  Tensor embed_time(std::span<const double> times) const;

  // One transformer block over the grouped tokens. t_emb and c_emb carry
  // one row per sample.
  Tensor attention_block(int layer, const TokenBatch& x, const Tensor& t_emb,
                         const Tensor& c_emb) const;

  // Rotation angles for each row of x (rows() x head_dim/2).
  std::vector<double> rope_angles(std::span<const int> positions) const;

  // Replaces every parameter with N(0, stddev^2) draws so no path is
  // silenced by the zero-initialised modulation.
  void perturb(double stddev, std::uint64_t seed);

 private:
  Tensor block_impl(int layer, const TokenBatch& x, const Tensor& cond_act) const;
  Tensor cond_activation(std::span<const double> times, std::span<const Condition> conds) const;

  DenoiserConfig config_;
  ParameterSet params_;
};

}  // namespace sg
