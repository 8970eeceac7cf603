#pragma once

// Analytic FLOP accounting for the token transformer and for guided
// sampling. Token counts under Bernoulli masks use their expectation
// (1 - gamma) * T, so reports are deterministic.

#include <span>
#include <string>
#include <vector>

#include "sglab/denoiser_config.hpp"
#include "sglab/guidance.hpp"
#include "sglab/sampler.hpp"

namespace sg {

struct CostConvention {
  std::string name;
  double flops_per_mac = 1.0;
  // Normalisation, modulation, residual, rotary, GELU and softmax work,
  // charged per element at fixed rates (see elementwise constants in the
  // implementation). Matmul-free; about 0.5% of the total at XL scale.
  bool count_elementwise = true;

  // One multiply-add counted as one FLOP; the convention of published
  // DiT/SiT GFLOP figures. Default for reports.
  static CostConvention mac();
  // One multiply-add counted as two FLOPs.
  static CostConvention fma2();
  // Matmul and attention multiply-adds only, one each; matches what
  // MacCounter observes in a real forward.
  static CostConvention executed_macs();
};

CostConvention parse_cost_convention(const std::string& name);

// Matmul FLOPs of one transformer block over T_active tokens:
// 2 (4 d^2 T + 2 d T^2) for attention and 2 (2 r d^2 T) for the MLP, with a
// multiply-add worth flops_per_mac / 2 of that. 0 when T_active is 0.
double layer_flops(double model_dim, int heads, double active_tokens, double mlp_ratio,
                   double flops_per_mac = 2.0);

struct CostOptions {
  CostConvention convention = CostConvention::mac();
  // Masking models usually keep dropped tokens as e_mask rows (full T). With
  // this flag they leave the sequence instead, as in encoder-only masking.
  bool mask_drop_from_sequence = false;
};

// One forward at rate gamma. route overrides the config's span; it is used
// only when the config selects routing.
double forward_flops(const DenoiserConfig& cfg, double gamma, const CostOptions& opts = {});
double forward_flops(const DenoiserConfig& cfg, double gamma, const RouteSpec& route,
                     const CostOptions& opts = {});
// Realised accounting: sample s keeps kept[s] tokens inside the sparse span.
double forward_flops_realized(const DenoiserConfig& cfg, std::span<const std::size_t> kept,
                              const CostOptions& opts = {});

struct CostReport {
  std::string convention;
  int steps = 0;
  double flops_strong = 0.0;  // schedule-averaged per forward
  double flops_weak = 0.0;    // 0 for single-branch modes
  double flops_per_step = 0.0;
  double flops_per_sample = 0.0;
  double unguided_per_step = 0.0;
  double cfg_per_step = 0.0;
  double delta_vs_unguided = 0.0;  // per step
  double delta_vs_cfg = 0.0;       // per step
};

// aux_cfg defaults to the main architecture.
CostReport guidance_flops(const DenoiserConfig& cfg, const GuidanceConfig& gcfg, const SamplerConfig& scfg,
                          const CostOptions& opts = {}, const DenoiserConfig* aux_cfg = nullptr);

struct CostTableRow {
  std::string label;
  CostReport report;
};

// Unguided, CFG, AG, SG_FLOPS and SG_FID rows for one architecture.
std::vector<CostTableRow> comparison_rows(const DenoiserConfig& cfg, const SamplerConfig& scfg,
                                          const CostOptions& opts = {});

}  // namespace sg
