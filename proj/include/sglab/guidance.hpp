#pragma once

// Guidance combination rules and branch resolution.
//
//   cfg     strong = main(c, 0)         weak = main(null, 0)
//   sg      strong = main(c, g_strong)  weak = main(c, g_weak),  g_strong < g_weak
//   cfg_sg  strong = main(c, g_strong)  weak = main(null, g_weak), g_strong <= g_weak
//   ag      strong = main(c, 0)         weak = aux(c, 0)
//   ag_sg   strong = main(c, g_strong)  weak = aux(c, g_weak)
//
// and the two predictions combine as strong + (omega - 1)(strong - weak).

#include <optional>
#include <string>
#include <vector>

#include "sglab/tensor.hpp"

namespace sg {

enum class GuidanceMode { none, cfg, sg, cfg_sg, ag, ag_sg };

std::string to_string(GuidanceMode m);
GuidanceMode parse_guidance_mode(const std::string& s);
// Modes whose branches differ only through sparsity and condition and so
// need an ordered pair of rates.
bool is_sparse_family(GuidanceMode m);
bool uses_aux_model(GuidanceMode m);
bool is_two_branch(GuidanceMode m);

struct GammaSchedule {
  enum class Kind { constant, cosine };
  Kind kind = Kind::constant;
  double start_value = 0.0;
  double end_value = 0.0;

  static GammaSchedule constant(double v) { return {Kind::constant, v, v}; }
  static GammaSchedule cosine(double from, double to) { return {Kind::cosine, from, to}; }
  void validate() const;
  bool operator==(const GammaSchedule&) const = default;
};

// constant -> start_value; cosine -> end + (start - end) (1 + cos(pi f)) / 2.
double gamma_schedule(const GammaSchedule& sched, double step_fraction);

struct GuidanceConfig {
  GuidanceMode mode = GuidanceMode::none;
  double omega = 1.0;
  GammaSchedule schedule_strong = GammaSchedule::constant(0.0);
  GammaSchedule schedule_weak = GammaSchedule::constant(0.0);
  bool shared_mask = false;
  // Keep exactly round((1 - gamma) T) tokens per forward instead of Bernoulli
  // draws; the realised cost then equals the analytic one.
  bool fixed_count_masks = false;
  std::optional<std::string> aux_checkpoint;

  void validate() const;
};

enum class ModelRole { main, auxiliary };
enum class CondUse { given, null };

struct BranchSpec {
  ModelRole model = ModelRole::main;
  CondUse condition = CondUse::given;
  double gamma = 0.0;
  bool operator==(const BranchSpec&) const = default;
};

struct BranchPair {
  BranchSpec strong;
  BranchSpec weak;  // equals strong for mode none
};

BranchPair resolve_branches(const GuidanceConfig& cfg, double step_fraction);

// omega * v_cond + (1 - omega) * v_uncond, evaluated as
// v_cond + (omega - 1)(v_cond - v_uncond) so omega = 1 returns v_cond exactly.
Tensor cfg_combine(const Tensor& v_cond, const Tensor& v_uncond, double omega);
Tensor sg_combine(const Tensor& v_strong, const Tensor& v_weak, double omega);

// Named presets: sg-flops, sg-fid, cfg, sg, cfg-sg, ag, none.
GuidanceConfig guidance_preset(const std::string& name);
std::vector<std::string> guidance_preset_names();

}  // namespace sg
