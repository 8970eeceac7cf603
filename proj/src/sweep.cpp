#include "sglab/sweep.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "sglab/cost_model.hpp"
#include "sglab/csv.hpp"
#include "sglab/dataset.hpp"
#include "sglab/error.hpp"
#include "sglab/metrics.hpp"

namespace sg {

std::string to_string(CellStatus s) {
  switch (s) {
    case CellStatus::ok: return "ok";
    case CellStatus::diverged: return "diverged";
    case CellStatus::inadmissible: return "inadmissible";
    case CellStatus::baseline: return "baseline";
  }
  return "?";
}

CellStatus parse_cell_status(const std::string& s) {
  if (s == "ok") return CellStatus::ok;
  if (s == "diverged") return CellStatus::diverged;
  if (s == "inadmissible") return CellStatus::inadmissible;
  if (s == "baseline") return CellStatus::baseline;
  throw FormatError("unknown cell status '" + s + "'");
}

GuidanceMode sweep_mode(const GuidanceConfig& base) {
  switch (base.mode) {
    case GuidanceMode::none:
    case GuidanceMode::sg: return GuidanceMode::sg;
    case GuidanceMode::cfg_sg: return GuidanceMode::cfg_sg;
    case GuidanceMode::ag_sg: return GuidanceMode::ag_sg;
    default: throw ConfigError("sweep needs guidance.mode sg, cfg_sg or ag_sg, not " + to_string(base.mode));
  }
}

bool cell_admissible(GuidanceMode mode, double gs, double gw) {
  if (mode == GuidanceMode::sg) return gs < gw || (gs == 0.0 && gw == 0.0);
  if (mode == GuidanceMode::cfg_sg) return gs <= gw;
  return true;
}

bool cell_is_baseline(GuidanceMode mode, double gs, double gw, double omega) {
  return gs == 0.0 && gw == 0.0 && (mode == GuidanceMode::sg || omega == 1.0);
}

GuidanceConfig cell_guidance(const GuidanceConfig& base, double gs, double gw, double omega) {
  GuidanceConfig g = base;
  g.mode = sweep_mode(base);
  g.omega = omega;
  g.schedule_strong = GammaSchedule::constant(gs);
  g.schedule_weak = GammaSchedule::constant(gw);
  if (cell_is_baseline(g.mode, gs, gw, omega)) g.mode = GuidanceMode::none;
  return g;
}

namespace {

constexpr std::uint64_t kReference = 0x4EF5;

std::vector<Condition> balanced(std::size_t n, int classes) {
  std::vector<Condition> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = Condition::of(static_cast<int>(i % static_cast<std::size_t>(classes)));
  return c;
}

}  // namespace

SampleSet sweep_reference(const ExperimentConfig& cfg) {
  return make_dataset(cfg.dataset, cfg.sweep.reference_size, derive_seed(cfg.seed, {kReference}));
}

double sweep_metric(const ExperimentConfig& cfg, const SampleSet& generated, const SampleSet& reference) {
  const SampleSet g = cfg.sweep.fid_subset_size > 0 ? take_rows(generated, cfg.sweep.fid_subset_size) : generated;
  return cfg.sweep.metric == "fd" ? pooled_fd(g, reference) : class_conditional_fd(g, reference);
}

SweepResult run_sweep(const ModelSet& models, const ExperimentConfig& cfg) {
  cfg.validate();
  if (!models.main) throw ConfigError("sweep: no main model");
  const GuidanceMode mode = sweep_mode(cfg.guidance);
  const DenoiserConfig& mc = models.main->config();

  SweepResult result;
  result.reference = sweep_reference(cfg);
  for (double gs : cfg.sweep.gamma_strong) {
    for (double gw : cfg.sweep.gamma_weak) {
      for (double w : cfg.sweep.omega) {
        SweepRow r;
        r.gamma_strong = gs;
        r.gamma_weak = gw;
        r.omega = w;
        r.seed = cfg.sweep.distinct_seeds ? derive_seed(cfg.sampler.seed, {result.rows.size()}) : cfg.sampler.seed;
        if (!cell_admissible(mode, gs, gw)) {
          r.status = CellStatus::inadmissible;
        } else if (cell_is_baseline(mode, gs, gw, w)) {
          r.status = CellStatus::baseline;
        }
        result.rows.push_back(r);
      }
    }
  }
  result.samples.resize(result.rows.size());
  const std::vector<Condition> conds = balanced(cfg.sweep.samples_per_cell, mc.num_classes);
  const CostOptions cost_opts{};

  auto evaluate = [&](std::size_t i) {
    SweepRow& r = result.rows[i];
    if (r.status == CellStatus::inadmissible) {
      r.fd = r.diversity = r.flops_per_step = std::nan("");
      return;
    }
    const GuidanceConfig g = cell_guidance(cfg.guidance, r.gamma_strong, r.gamma_weak, r.omega);
    SamplerConfig sc = cfg.sampler;
    sc.seed = r.seed;
    r.flops_per_step =
        guidance_flops(mc, g, sc, cost_opts, models.aux ? &models.aux->config() : nullptr).flops_per_step;
    try {
      SampleSet s = generate(models, conds, g, sc);
      r.fd = sweep_metric(cfg, s, result.reference);
      r.diversity = pairwise_diversity(s.values, s.dim, cfg.sweep.diversity_pairs, r.seed);
      if (!std::isfinite(r.fd) || !std::isfinite(r.diversity)) throw DivergenceError("non-finite metric", -1);
      result.samples[i] = std::move(s);
    } catch (const DivergenceError& e) {
      r.status = CellStatus::diverged;
      r.diverged = true;
      r.diverged_step = e.step();
      r.fd = r.diversity = std::nan("");
      result.samples[i] = {};
    }
  };

  const std::size_t n = result.rows.size();
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.sweep.workers), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) evaluate(i);
    return result;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          evaluate(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return result;
}

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "gamma_strong,gamma_weak,omega,fd,diversity,flops_per_step,diverged,seed,status\n";
  for (const auto& r : rows) {
    out << format_double(r.gamma_strong) << ',' << format_double(r.gamma_weak) << ',' << format_double(r.omega)
        << ',' << format_double(r.fd) << ',' << format_double(r.diversity) << ','
        << format_double(r.flops_per_step) << ',' << (r.diverged ? 1 : 0) << ',' << r.seed << ','
        << to_string(r.status) << '\n';
  }
  if (!out) throw FormatError("error while writing " + path.string());
}

std::vector<SweepRow> read_sweep_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("gamma_strong,gamma_weak,omega,fd", 0) != 0) throw FormatError(path.string() + ": not a sweep CSV");
  std::vector<SweepRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<std::string> f;
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 9) throw FormatError(path.string() + ": expected 9 columns");
    SweepRow r;
    r.gamma_strong = parse_double(f[0], "gamma_strong");
    r.gamma_weak = parse_double(f[1], "gamma_weak");
    r.omega = parse_double(f[2], "omega");
    r.fd = parse_double(f[3], "fd");
    r.diversity = parse_double(f[4], "diversity");
    r.flops_per_step = parse_double(f[5], "flops_per_step");
    r.diverged = f[6] == "1";
    r.seed = std::stoull(f[7]);
    r.status = parse_cell_status(f[8]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace sg
