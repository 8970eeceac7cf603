#include "sglab/cost_model.hpp"

#include <algorithm>

#include "sglab/error.hpp"

namespace sg {

// Elementwise rates, FLOPs per element touched:
//   rmsnorm 4 (square, accumulate, rsqrt scale, gain), modulation 3,
//   gate + residual 2, rotary 3 per rotated value, GELU 8,
//   softmax 5 per score plus 1 for the 1/sqrt(hd) scaling.
namespace {

constexpr double kNorm = 4.0;
constexpr double kModulate = 3.0;
constexpr double kGateResidual = 2.0;
constexpr double kRotary = 3.0;
constexpr double kGelu = 8.0;
constexpr double kSoftmax = 6.0;
constexpr double kTimeFeature = 4.0;

struct Parts {
  double macs = 0.0;
  double elementwise = 0.0;
};

Parts block_parts(const DenoiserConfig& cfg, double T) {
  if (T <= 0.0) return {};
  const double d = cfg.model_dim;
  const double r = cfg.mlp_ratio;
  Parts p;
  p.macs = 4.0 * d * d * T + 2.0 * d * T * T + 2.0 * r * d * d * T;
  p.elementwise = T * d * (2 * kNorm + 2 * kModulate + 2 * kGateResidual + 2 * kRotary) + T * r * d * kGelu +
                  kSoftmax * cfg.num_heads * T * T;
  return p;
}

// Work done once per sample whatever the sparsity: embedding, time and
// condition MLPs, every block's modulation projection, final layer, head.
Parts sample_parts(const DenoiserConfig& cfg) {
  const double d = cfg.model_dim;
  const double T = cfg.tokens();
  const double cols = cfg.state_cols();
  const double F = cfg.time_features;
  Parts p;
  p.macs = T * cols * d                        // embedding
           + F * d + d * d                     // time MLP
           + cfg.num_layers * d * 6.0 * d      // block modulation
           + d * 2.0 * d                       // final modulation
           + T * d * cols;                     // head
  p.elementwise = kTimeFeature * F + kGelu * d + d + kGelu * d + T * d * (kNorm + kModulate);
  return p;
}

double total(const Parts& p, const CostConvention& conv) {
  return p.macs * conv.flops_per_mac + (conv.count_elementwise ? p.elementwise : 0.0);
}

void check_route(const DenoiserConfig& cfg, const RouteSpec& route) {
  if (route.start_layer < 0 || route.start_layer >= route.end_layer || route.end_layer >= cfg.num_layers) {
    throw ConfigError("cost model: route must satisfy 0 <= start < end < num_layers");
  }
}

// kept_inside: tokens processed by a layer that drops.
double forward_parts(const DenoiserConfig& cfg, const RouteSpec& route, double kept_inside,
                     const CostOptions& opts) {
  const double T = cfg.tokens();
  Parts acc = sample_parts(cfg);
  for (int layer = 0; layer < cfg.num_layers; ++layer) {
    double active = T;
    if (cfg.sparsity == SparsityMode::route && route.contains(layer)) active = kept_inside;
    if (cfg.sparsity == SparsityMode::mask && opts.mask_drop_from_sequence) active = kept_inside;
    const Parts b = block_parts(cfg, active);
    acc.macs += b.macs;
    acc.elementwise += b.elementwise;
  }
  return total(acc, opts.convention);
}

}  // namespace

CostConvention CostConvention::mac() { return {"mac", 1.0, true}; }
CostConvention CostConvention::fma2() { return {"fma2", 2.0, true}; }
CostConvention CostConvention::executed_macs() { return {"executed-macs", 1.0, false}; }

CostConvention parse_cost_convention(const std::string& name) {
  if (name == "mac") return CostConvention::mac();
  if (name == "fma2") return CostConvention::fma2();
  if (name == "executed-macs") return CostConvention::executed_macs();
  throw ConfigError("unknown cost convention '" + name + "' (mac|fma2|executed-macs)");
}

double layer_flops(double model_dim, int heads, double active_tokens, double mlp_ratio, double flops_per_mac) {
  (void)heads;  // score and value matmuls cost the same however d is split
  if (active_tokens < 0.0) throw DomainError("layer_flops: negative token count");
  if (active_tokens == 0.0) return 0.0;
  const double d = model_dim, T = active_tokens;
  return flops_per_mac * (4.0 * d * d * T + 2.0 * d * T * T + 2.0 * mlp_ratio * d * d * T);
}

double forward_flops(const DenoiserConfig& cfg, double gamma, const CostOptions& opts) {
  return forward_flops(cfg, gamma, cfg.route, opts);
}

double forward_flops(const DenoiserConfig& cfg, double gamma, const RouteSpec& route, const CostOptions& opts) {
  cfg.validate();
  if (cfg.sparsity == SparsityMode::route) check_route(cfg, route);
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("forward_flops: gamma outside [0, 1)");
  const double kept = (1.0 - gamma) * cfg.tokens();
  return forward_parts(cfg, route, kept, opts);
}

double forward_flops_realized(const DenoiserConfig& cfg, std::span<const std::size_t> kept,
                              const CostOptions& opts) {
  cfg.validate();
  double sum = 0.0;
  for (std::size_t k : kept) {
    if (k > static_cast<std::size_t>(cfg.tokens())) throw DomainError("forward_flops_realized: kept > tokens");
    sum += forward_parts(cfg, cfg.route, static_cast<double>(k), opts);
  }
  return sum;
}

CostReport guidance_flops(const DenoiserConfig& cfg, const GuidanceConfig& gcfg, const SamplerConfig& scfg,
                          const CostOptions& opts, const DenoiserConfig* aux_cfg) {
  scfg.validate();
  const DenoiserConfig& weak_arch = aux_cfg ? *aux_cfg : cfg;
  CostReport rep;
  rep.convention = opts.convention.name;
  rep.steps = scfg.num_steps;
  rep.unguided_per_step = forward_flops(cfg, 0.0, opts);
  rep.cfg_per_step = 2.0 * rep.unguided_per_step;

  std::vector<double> strong(static_cast<std::size_t>(scfg.num_steps));
  std::vector<double> weak(strong.size(), 0.0);
  for (int k = 0; k < scfg.num_steps; ++k) {
    const BranchPair b = resolve_branches(gcfg, scfg.step_fraction(k));
    const auto i = static_cast<std::size_t>(k);
    strong[i] = forward_flops(b.strong.model == ModelRole::main ? cfg : weak_arch, b.strong.gamma, opts);
    if (is_two_branch(gcfg.mode)) {
      weak[i] = forward_flops(b.weak.model == ModelRole::main ? cfg : weak_arch, b.weak.gamma, opts);
    }
  }
  // A constant schedule reports its per-forward value unchanged rather than
  // a rounded mean, which keeps the CFG identity exact.
  auto average = [](const std::vector<double>& v) {
    if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return v.front();
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  rep.flops_strong = average(strong);
  rep.flops_weak = average(weak);
  rep.flops_per_step = rep.flops_strong + rep.flops_weak;
  rep.flops_per_sample = rep.flops_per_step * scfg.num_steps;
  rep.delta_vs_unguided = rep.flops_per_step - rep.unguided_per_step;
  rep.delta_vs_cfg = rep.flops_per_step - rep.cfg_per_step;
  return rep;
}

std::vector<CostTableRow> comparison_rows(const DenoiserConfig& cfg, const SamplerConfig& scfg,
                                          const CostOptions& opts) {
  std::vector<CostTableRow> rows;
  const std::pair<const char*, const char*> entries[] = {
      {"unguided", "none"}, {"+CFG", "cfg"}, {"+AG", "ag"}, {"+SG_FLOPS", "sg-flops"}, {"+SG_FID", "sg-fid"}};
  for (const auto& [label, preset] : entries) {
    rows.push_back({label, guidance_flops(cfg, guidance_preset(preset), scfg, opts)});
  }
  return rows;
}

}  // namespace sg
