#include "sglab/guidance.hpp"

#include <cmath>
#include <numbers>

#include "sglab/error.hpp"

namespace sg {

std::string to_string(GuidanceMode m) {
  switch (m) {
    case GuidanceMode::none: return "none";
    case GuidanceMode::cfg: return "cfg";
    case GuidanceMode::sg: return "sg";
    case GuidanceMode::cfg_sg: return "cfg_sg";
    case GuidanceMode::ag: return "ag";
    case GuidanceMode::ag_sg: return "ag_sg";
  }
  return "?";
}

GuidanceMode parse_guidance_mode(const std::string& s) {
  if (s == "none") return GuidanceMode::none;
  if (s == "cfg") return GuidanceMode::cfg;
  if (s == "sg") return GuidanceMode::sg;
  if (s == "cfg_sg" || s == "cfg-sg") return GuidanceMode::cfg_sg;
  if (s == "ag") return GuidanceMode::ag;
  if (s == "ag_sg" || s == "ag-sg") return GuidanceMode::ag_sg;
  throw ConfigError("unknown guidance mode '" + s + "' (none|cfg|sg|cfg_sg|ag|ag_sg)");
}

bool is_sparse_family(GuidanceMode m) { return m == GuidanceMode::sg || m == GuidanceMode::cfg_sg; }
bool uses_aux_model(GuidanceMode m) { return m == GuidanceMode::ag || m == GuidanceMode::ag_sg; }
bool is_two_branch(GuidanceMode m) { return m != GuidanceMode::none; }

void GammaSchedule::validate() const {
  auto ok = [](double g) { return g >= 0.0 && g < 1.0; };
  if (!ok(start_value) || !ok(end_value)) throw ConfigError("gamma schedule values must lie in [0, 1)");
}

double gamma_schedule(const GammaSchedule& sched, double step_fraction) {
  if (!(step_fraction >= 0.0 && step_fraction <= 1.0)) {
    throw DomainError("gamma_schedule: step fraction outside [0, 1]");
  }
  if (sched.kind == GammaSchedule::Kind::constant) return sched.start_value;
  const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * step_fraction));
  return sched.end_value + (sched.start_value - sched.end_value) * w;
}

void GuidanceConfig::validate() const {
  if (!(omega >= 0.0) || !std::isfinite(omega)) throw ConfigError("guidance omega must be finite and >= 0");
  schedule_strong.validate();
  schedule_weak.validate();
}

namespace {

void check_order(const GuidanceConfig& cfg, double gs, double gw, double f) {
  auto where = [&] {
    return " (gamma_strong=" + std::to_string(gs) + ", gamma_weak=" + std::to_string(gw) +
           ", step fraction " + std::to_string(f) + ")";
  };
  if (cfg.mode == GuidanceMode::sg && !(gs < gw)) {
    throw InvariantError("sg requires gamma_strong < gamma_weak" + where());
  }
  if (cfg.mode == GuidanceMode::cfg_sg && !(gs <= gw)) {
    throw InvariantError("cfg_sg requires gamma_strong <= gamma_weak" + where());
  }
}

}  // namespace

BranchPair resolve_branches(const GuidanceConfig& cfg, double step_fraction) {
  cfg.validate();
  if (uses_aux_model(cfg.mode) && !cfg.aux_checkpoint) {
    throw ConfigError(to_string(cfg.mode) + " requires an auxiliary checkpoint");
  }
  const double gs = gamma_schedule(cfg.schedule_strong, step_fraction);
  const double gw = gamma_schedule(cfg.schedule_weak, step_fraction);
  BranchPair p;
  switch (cfg.mode) {
    case GuidanceMode::none:
      p.strong = {ModelRole::main, CondUse::given, 0.0};
      p.weak = p.strong;
      break;
    case GuidanceMode::cfg:
      p.strong = {ModelRole::main, CondUse::given, 0.0};
      p.weak = {ModelRole::main, CondUse::null, 0.0};
      break;
    case GuidanceMode::sg:
      check_order(cfg, gs, gw, step_fraction);
      p.strong = {ModelRole::main, CondUse::given, gs};
      p.weak = {ModelRole::main, CondUse::given, gw};
      break;
    case GuidanceMode::cfg_sg:
      check_order(cfg, gs, gw, step_fraction);
      p.strong = {ModelRole::main, CondUse::given, gs};
      p.weak = {ModelRole::main, CondUse::null, gw};
      break;
    case GuidanceMode::ag:
      p.strong = {ModelRole::main, CondUse::given, 0.0};
      p.weak = {ModelRole::auxiliary, CondUse::given, 0.0};
      break;
    case GuidanceMode::ag_sg:
      p.strong = {ModelRole::main, CondUse::given, gs};
      p.weak = {ModelRole::auxiliary, CondUse::given, gw};
      break;
  }
  return p;
}

Tensor sg_combine(const Tensor& v_strong, const Tensor& v_weak, double omega) {
  return add(v_strong, scale(sub(v_strong, v_weak), omega - 1.0));
}

Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_uncond, double omega) {
  return sg_combine(v_cond, v_uncond, omega);
}

GuidanceConfig guidance_preset(const std::string& name) {
  GuidanceConfig g;
  if (name == "none") {
    g.mode = GuidanceMode::none;
  } else if (name == "cfg") {
    g.mode = GuidanceMode::cfg;
    g.omega = 1.5;
  } else if (name == "sg") {
    g.mode = GuidanceMode::sg;
    g.omega = 1.5;
    g.schedule_strong = GammaSchedule::constant(0.2);
    g.schedule_weak = GammaSchedule::constant(0.6);
  } else if (name == "sg-flops") {
    g.mode = GuidanceMode::sg;
    g.omega = 1.5;
    g.schedule_strong = GammaSchedule::constant(0.5);
    g.schedule_weak = GammaSchedule::constant(0.9);
  } else if (name == "cfg-sg") {
    g.mode = GuidanceMode::cfg_sg;
    g.omega = 1.5;
    g.schedule_strong = GammaSchedule::constant(0.2);
    g.schedule_weak = GammaSchedule::constant(0.6);
  } else if (name == "ag") {
    g.mode = GuidanceMode::ag;
    g.omega = 1.5;
    g.aux_checkpoint = "early";
  } else if (name == "sg-fid") {
    // Early checkpoint as the weak branch; its rate decays 0.6 -> 0 while the
    // main model's rises 0 -> 0.6.
    g.mode = GuidanceMode::ag_sg;
    g.omega = 1.5;
    g.schedule_strong = GammaSchedule::cosine(0.0, 0.6);
    g.schedule_weak = GammaSchedule::cosine(0.6, 0.0);
    g.aux_checkpoint = "early";
  } else {
    throw ConfigError("unknown guidance preset '" + name + "'");
  }
  return g;
}

std::vector<std::string> guidance_preset_names() {
  return {"none", "cfg", "sg", "sg-flops", "cfg-sg", "ag", "sg-fid"};
}

}  // namespace sg
