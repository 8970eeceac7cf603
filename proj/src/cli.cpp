#include "sglab/cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <memory>

#include "sglab/cost_model.hpp"
#include "sglab/csv.hpp"
#include "sglab/dataset.hpp"
#include "sglab/error.hpp"
#include "sglab/log.hpp"
#include "sglab/metrics.hpp"
#include "sglab/run.hpp"
#include "sglab/sweep.hpp"
#include "sglab/train.hpp"

namespace sg {

namespace fs = std::filesystem;

namespace {

std::string quote(const std::string& s) {
  if (!s.empty() && s.find_first_of(" \t\"'\\$") == std::string::npos) return s;
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

std::string command_line(int argc, const char* const* argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) s += (i ? " " : "") + quote(argv[i]);
  return s;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// A subcommand option that writes one config key.
struct Binding {
  CLI::Option* option;
  std::string key;
  std::string* value;
};

struct Subcommand {
  CLI::App* app = nullptr;
  std::string config_file;
  std::vector<std::string> sets;
  std::string out;
  std::vector<Binding> bindings;
  std::deque<std::string> storage;

  void bind(const std::string& flag, const std::string& key, const std::string& help) {
    std::string& slot = storage.emplace_back();
    bindings.push_back({app->add_option(flag, slot, help), key, &slot});
  }
  void common(bool needs_out) {
    app->add_option("--config", config_file, "Config file (key = value lines)");
    app->add_option("--set", sets, "Override a config key: key=value (repeatable)");
    if (needs_out) app->add_option("--out", out, "Run directory to write")->default_str("runs/" + app->get_name());
    bind("--seed", "experiment.seed", "Experiment seed");
  }
  std::string flag_value(const std::string& key) const {
    for (const auto& b : bindings) {
      if (b.key == key && b.option->count() > 0) return *b.value;
    }
    return {};
  }
};

// resolve ties the architecture to the dataset; the cost report skips it so
// presets like xl2 stay intact.
ExperimentConfig build_config(const Subcommand& sc, bool resolve = true) {
  ExperimentConfig cfg;
  ExperimentConfig file_cfg;
  if (!sc.config_file.empty()) file_cfg = load_config(sc.config_file);
  std::string run = sc.flag_value("input.run");
  if (run.empty()) run = file_cfg.input.run;
  // Sampling and sweeps inherit the settings of the run that trained the model.
  if (!run.empty() && fs::exists(fs::path(run) / "config.txt")) cfg = load_config(fs::path(run) / "config.txt");
  if (!sc.config_file.empty()) cfg = load_config(sc.config_file, cfg);
  for (const auto& b : sc.bindings) {
    if (b.option->count() > 0) set_config_value(cfg, b.key, *b.value);
  }
  for (const auto& s : sc.sets) apply_override(cfg, s);
  if (resolve) cfg.resolve();
  return cfg;
}

struct LoadedModels {
  std::unique_ptr<Denoiser> main;
  std::unique_ptr<Denoiser> aux;
  ModelSet set() const { return {main.get(), aux.get()}; }
};

LoadedModels load_models(const ExperimentConfig& cfg, bool allow_untrained) {
  LoadedModels m;
  const fs::path run = cfg.input.run;
  if (!cfg.input.checkpoint.empty() || !run.empty()) {
    const fs::path main_path = resolve_checkpoint(run, cfg.input.checkpoint.empty() ? "final" : cfg.input.checkpoint);
    m.main = std::make_unique<Denoiser>(model_from_checkpoint(load_checkpoint(main_path)));
  } else if (allow_untrained) {
    warn("no checkpoint given (input.run / input.checkpoint); sampling from an untrained model");
    m.main = std::make_unique<Denoiser>(cfg.denoiser, cfg.seed);
  } else {
    throw ConfigError("a trained model is required: pass --run or --checkpoint");
  }
  if (uses_aux_model(cfg.guidance.mode)) {
    const std::string ref = cfg.guidance.aux_checkpoint.value_or("early");
    m.aux = std::make_unique<Denoiser>(model_from_checkpoint(load_checkpoint(resolve_checkpoint(run, ref))));
  }
  return m;
}

Manifest start_manifest(const std::string& sub, const ExperimentConfig& cfg, int argc, const char* const* argv) {
  Manifest m;
  m.subcommand = sub;
  m.command = command_line(argc, argv);
  m.seed = cfg.seed;
  m.started = utc_timestamp();
  return m;
}

void finish_manifest(const fs::path& dir, Manifest m) {
  m.finished = utc_timestamp();
  write_manifest(dir, m);
}

std::vector<Condition> sample_conditions(const ExperimentConfig& cfg) {
  std::vector<Condition> conds(cfg.sample.n);
  const std::string& l = cfg.sample.label;
  for (std::size_t i = 0; i < conds.size(); ++i) {
    if (l == "balanced") {
      conds[i] = Condition::of(static_cast<int>(i % static_cast<std::size_t>(cfg.denoiser.num_classes)));
    } else if (l == "null") {
      conds[i] = Condition::null();
    } else {
      try {
        conds[i] = Condition::of(std::stoi(l));
      } catch (const std::logic_error&) {
        throw ConfigError("sample.label must be balanced, null or a class index");
      }
    }
  }
  return conds;
}

void write_flops_csv(const fs::path& path, const std::vector<CostTableRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "label,convention,steps,flops_strong,flops_weak,flops_per_step,flops_per_sample,delta_vs_unguided,delta_vs_cfg\n";
  for (const auto& r : rows) {
    const auto& p = r.report;
    out << r.label << ',' << p.convention << ',' << p.steps << ',' << format_double(p.flops_strong) << ','
        << format_double(p.flops_weak) << ',' << format_double(p.flops_per_step) << ','
        << format_double(p.flops_per_sample) << ',' << format_double(p.delta_vs_unguided) << ','
        << format_double(p.delta_vs_cfg) << '\n';
  }
}

// Largest unit that keeps the unguided cost at or above 1.
std::pair<double, const char*> flop_unit(double flops) {
  if (flops >= 1e9) return {1e9, "GFLOPs"};
  if (flops >= 1e6) return {1e6, "MFLOPs"};
  if (flops >= 1e3) return {1e3, "kFLOPs"};
  return {1.0, "FLOPs"};
}

void print_cost_rows(std::ostream& out, const std::vector<CostTableRow>& rows) {
  const auto [unit, name] = flop_unit(rows.front().report.unguided_per_step);
  char head[160];
  std::snprintf(head, sizeof head, "label        %7s/step   delta_unguided   delta_cfg   (%s, %d steps)\n", name,
                rows.front().report.convention.c_str(), rows.front().report.steps);
  out << head;
  for (const auto& r : rows) {
    char line[160];
    std::snprintf(line, sizeof line, "%-12s %12.2f %+15.2f %+11.2f\n", r.label.c_str(), r.report.flops_per_step / unit,
                  r.report.delta_vs_unguided / unit, r.report.delta_vs_cfg / unit);
    out << line;
  }
}

int cmd_train(const Subcommand& sc, int argc, const char* const* argv, std::ostream& out) {
  const ExperimentConfig cfg = build_config(sc);
  cfg.validate();
  const fs::path dir = sc.out;
  write_run_config(dir, cfg);
  Manifest man = start_manifest("train", cfg, argc, argv);
  std::ofstream log(dir / "train_log.csv", std::ios::trunc);
  log << "iteration,loss,fm,aux,active_tokens,forward_flops\n";
  TrainHooks hooks;
  hooks.on_log = [&](const TrainLogRow& r) {
    log << r.iteration << ',' << format_double(r.loss) << ',' << format_double(r.fm) << ',' << format_double(r.aux)
        << ',' << r.active_tokens << ',' << format_double(r.forward_flops) << '\n';
    out << "iter " << r.iteration << "  loss " << fmt("%.5f", r.loss) << '\n';
  };
  hooks.on_checkpoint = [&](const Checkpoint& c) { save_checkpoint(checkpoint_path(dir, c.iteration), c); };
  const TrainResult res = train(cfg, hooks);
  man.extra.push_back({"initial_eval_loss", format_double(res.initial_eval_loss)});
  man.extra.push_back({"final_eval_loss", format_double(res.final_eval_loss)});
  finish_manifest(dir, man);
  out << "eval loss " << fmt("%.5f", res.initial_eval_loss) << " -> " << fmt("%.5f", res.final_eval_loss) << ", "
      << res.checkpoints.size() << " checkpoint(s) in " << (dir / "checkpoints").string() << '\n';
  return 0;
}

int cmd_sample(const Subcommand& sc, int argc, const char* const* argv, std::ostream& out) {
  const ExperimentConfig cfg = build_config(sc);
  cfg.validate();
  const LoadedModels models = load_models(cfg, true);
  const fs::path dir = sc.out;
  write_run_config(dir, cfg);
  Manifest man = start_manifest("sample", cfg, argc, argv);
  const auto conds = sample_conditions(cfg);
  const SampleSet s = generate(models.set(), conds, cfg.guidance, cfg.sampler);
  write_samples_csv(dir / "samples" / "samples.csv", s);
  if (cfg.denoiser.layout == TokenLayout::image) {
    // Raw grid dump: n x channels x side x side little-endian doubles.
    std::ofstream bin(dir / "samples" / "samples.bin", std::ios::binary | std::ios::trunc);
    bin.write(reinterpret_cast<const char*>(s.values.data()), static_cast<std::streamsize>(s.values.size() * sizeof(double)));
  }
  finish_manifest(dir, man);
  out << "wrote " << s.size() << " samples to " << (dir / "samples" / "samples.csv").string() << '\n';
  return 0;
}

int cmd_sweep(const Subcommand& sc, int argc, const char* const* argv, std::ostream& out) {
  ExperimentConfig cfg = build_config(sc);
  cfg.validate();
  if (cfg.guidance.mode == GuidanceMode::none) cfg.guidance.mode = GuidanceMode::sg;
  const LoadedModels models = load_models(cfg, false);
  const fs::path dir = sc.out;
  write_run_config(dir, cfg);
  Manifest man = start_manifest("sweep", cfg, argc, argv);
  const SweepResult res = run_sweep(models.set(), cfg);
  write_sweep_csv(dir / "sweep.csv", res.rows);
  if (cfg.sweep.write_samples) {
    write_samples_csv(dir / "samples" / "reference.csv", res.reference);
    for (std::size_t i = 0; i < res.rows.size(); ++i) {
      if (res.samples[i].size() == 0) continue;
      char name[32];
      std::snprintf(name, sizeof name, "cell_%03zu.csv", i);
      write_samples_csv(dir / "samples" / name, res.samples[i]);
    }
  }
  write_flops_csv(dir / "flops.csv", comparison_rows(models.main->config(), cfg.sampler));
  finish_manifest(dir, man);

  std::size_t ok = 0, diverged = 0, skipped = 0;
  for (const auto& r : res.rows) {
    ok += r.status == CellStatus::ok || r.status == CellStatus::baseline;
    diverged += r.status == CellStatus::diverged;
    skipped += r.status == CellStatus::inadmissible;
  }
  out << res.rows.size() << " cells: " << ok << " evaluated, " << diverged << " diverged, " << skipped
      << " inadmissible\n";
  for (double w : cfg.sweep.omega) {
    const SweepRow* best = nullptr;
    for (const auto& r : res.rows) {
      if (r.omega == w && r.status == CellStatus::ok && (!best || r.fd < best->fd)) best = &r;
    }
    if (best) {
      out << "omega " << fmt("%.2f", w) << ": best fd " << fmt("%.4f", best->fd) << " at (" << fmt("%.2f", best->gamma_strong)
          << ", " << fmt("%.2f", best->gamma_weak) << ")\n";
    }
  }
  out << "results in " << (dir / "sweep.csv").string() << '\n';
  return 0;
}

int cmd_flops(const Subcommand& sc, const std::string& convention, bool drop_mode, const std::string& preset,
              double gamma, int argc, const char* const* argv, std::ostream& out) {
  ExperimentConfig cfg = build_config(sc, false);
  cfg.denoiser.validate();
  CostOptions opts;
  opts.convention = parse_cost_convention(convention);
  opts.mask_drop_from_sequence = drop_mode;
  std::vector<CostTableRow> rows = comparison_rows(cfg.denoiser, cfg.sampler, opts);
  // The comparison table always prints; a preset outside it is appended.
  if (!preset.empty()) {
    const GuidanceConfig g = guidance_preset(preset);
    const bool in_table = preset == "none" || preset == "cfg" || preset == "ag" || preset == "sg-flops" ||
                          preset == "sg-fid";
    if (!in_table) rows.push_back({"+" + preset, guidance_flops(cfg.denoiser, g, cfg.sampler, opts)});
  }
  print_cost_rows(out, rows);
  const double single = forward_flops(cfg.denoiser, gamma, opts);
  const auto [unit, name] = flop_unit(forward_flops(cfg.denoiser, 0.0, opts));
  out << "forward at gamma " << fmt("%.2f", gamma) << ": " << fmt("%.3f", single / unit) << ' ' << name << '\n';
  if (!sc.out.empty()) {
    write_run_config(sc.out, cfg);
    Manifest man = start_manifest("flops", cfg, argc, argv);
    write_flops_csv(fs::path(sc.out) / "flops.csv", rows);
    finish_manifest(sc.out, man);
  }
  return 0;
}

int cmd_eval(const std::string& reference, const std::string& generated, std::size_t subset, const std::string& metric,
             std::size_t pairs, std::uint64_t seed, std::ostream& out) {
  const SampleSet ref = read_samples_csv(reference);
  SampleSet gen = read_samples_csv(generated);
  if (subset > 0) gen = take_rows(gen, subset);
  const double fd_class = class_conditional_fd(gen, ref);
  const double fd_pooled = pooled_fd(gen, ref);
  const SampleSet full = read_samples_csv(generated);
  const double div = pairwise_diversity(full.values, full.dim, pairs, seed);
  if (metric != "class-fd" && metric != "fd") throw UsageError("--metric must be class-fd or fd");
  out << "fd = " << format_double(metric == "fd" ? fd_pooled : fd_class) << '\n'
      << "fd_class = " << format_double(fd_class) << '\n'
      << "fd_pooled = " << format_double(fd_pooled) << '\n'
      << "diversity = " << format_double(div) << '\n'
      << "samples = " << gen.size() << '\n';
  return 0;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  const fs::path p = path;
  if (fs::is_directory(p)) {
    for (const auto& [k, v] : read_manifest(p)) out << k << " = " << v << '\n';
    const auto ck = list_checkpoints(p);
    out << "checkpoints = " << ck.size() << '\n';
    for (const auto& c : ck) out << "  " << c.filename().string() << '\n';
    return 0;
  }
  const Checkpoint c = load_checkpoint(p);
  out << "iteration = " << c.iteration << '\n'
      << "parameters = " << c.parameters.value_count() << " in " << c.parameters.size() << " tensors\n"
      << serialize_denoiser_config(c.config);
  for (const auto& [name, t] : c.parameters) {
    out << "  " << name << " [";
    for (std::size_t i = 0; i < t.rank(); ++i) out << (i ? "x" : "") << t.shape()[i];
    out << "]\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"sglab: sparse guidance for flow models at desk scale"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Subcommand train_cmd, sample_cmd, sweep_cmd, flops_cmd;
  train_cmd.app = app.add_subcommand("train", "Train a model and write checkpoints");
  train_cmd.common(true);
  train_cmd.bind("--dataset", "experiment.dataset", "gaussians8|checkerboard|two-moons|toy-image");
  train_cmd.bind("--iterations", "optim.iterations", "Optimizer steps");
  train_cmd.bind("--batch", "optim.batch", "Batch size");
  train_cmd.bind("--sparsity", "denoiser.sparsity", "dense|mask|route");
  train_cmd.bind("--init", "train.init", "Start from this checkpoint (finetuning)");

  auto guidance_flags = [](Subcommand& s) {
    s.bind("--preset", "guidance.preset", "Guidance preset (none|cfg|sg|sg-flops|cfg-sg|ag|sg-fid)");
    s.bind("--mode", "guidance.mode", "none|cfg|sg|cfg_sg|ag|ag_sg");
    s.bind("--omega", "guidance.omega", "Guidance scale");
    s.bind("--gamma-strong", "guidance.gamma_strong", "Strong-branch sparsity");
    s.bind("--gamma-weak", "guidance.gamma_weak", "Weak-branch sparsity");
    s.bind("--aux", "guidance.aux_checkpoint", "Auxiliary checkpoint: early|init|final|<path>");
    s.bind("--steps", "sampler.steps", "Euler steps");
    s.bind("--run", "input.run", "Training run directory");
    s.bind("--checkpoint", "input.checkpoint", "Main checkpoint: final|early|<path>");
  };
  sample_cmd.app = app.add_subcommand("sample", "Draw samples and write a CSV");
  sample_cmd.common(true);
  guidance_flags(sample_cmd);
  sample_cmd.bind("--n", "sample.n", "Number of samples");
  sample_cmd.bind("--label", "sample.label", "balanced|null|<class>");

  sweep_cmd.app = app.add_subcommand("sweep", "Evaluate the (gamma_strong, gamma_weak, omega) grid");
  sweep_cmd.common(true);
  guidance_flags(sweep_cmd);
  sweep_cmd.bind("--workers", "sweep.workers", "Concurrent cells");
  sweep_cmd.bind("--samples", "sweep.samples_per_cell", "Samples per cell");

  flops_cmd.app = app.add_subcommand("flops", "Print analytic FLOP comparisons");
  flops_cmd.common(false);
  flops_cmd.app->add_option("--out", flops_cmd.out, "Also write flops.csv and a manifest here");
  flops_cmd.bind("--arch", "denoiser.preset", "desk|xl2");
  flops_cmd.bind("--steps", "sampler.steps", "Euler steps");
  std::string preset, convention = "mac";
  bool drop_mode = false;
  double gamma = 0.0;
  flops_cmd.app->add_option("--preset", preset, "Report this guidance preset against the baselines");
  flops_cmd.app->add_option("--convention", convention, "mac|fma2|executed-macs")->capture_default_str();
  flops_cmd.app->add_flag("--drop-mode", drop_mode, "Masked tokens leave the sequence");
  flops_cmd.app->add_option("--gamma", gamma, "Rate for the single-forward line")->capture_default_str();

  auto* eval_app = app.add_subcommand("eval", "Score a generated sample CSV against a reference CSV");
  std::string ref_csv, gen_csv, metric = "class-fd";
  std::size_t subset = 0, pairs = 20000;
  std::uint64_t eval_seed = 0;
  eval_app->add_option("--reference", ref_csv, "Reference samples")->required();
  eval_app->add_option("--generated", gen_csv, "Generated samples")->required();
  eval_app->add_option("--subset", subset, "Use the first N generated samples for FD (0 = all)");
  eval_app->add_option("--metric", metric, "class-fd|fd")->capture_default_str();
  eval_app->add_option("--pairs", pairs, "Pairs for the diversity estimate")->capture_default_str();
  eval_app->add_option("--seed", eval_seed, "Seed of the pair draw (the sweep uses the cell seed)");

  auto* inspect_app = app.add_subcommand("inspect", "Describe a checkpoint file or run directory");
  std::string inspect_path;
  inspect_app->add_option("path", inspect_path, "Checkpoint or run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << "run 'sglab --help' for usage\n";
    return 2;
  }

  try {
    if (train_cmd.app->parsed()) return cmd_train(train_cmd, argc, argv, out);
    if (sample_cmd.app->parsed()) return cmd_sample(sample_cmd, argc, argv, out);
    if (sweep_cmd.app->parsed()) return cmd_sweep(sweep_cmd, argc, argv, out);
    if (flops_cmd.app->parsed()) return cmd_flops(flops_cmd, convention, drop_mode, preset, gamma, argc, argv, out);
    if (eval_app->parsed()) return cmd_eval(ref_csv, gen_csv, subset, metric, pairs, eval_seed, out);
    if (inspect_app->parsed()) return cmd_inspect(inspect_path, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace sg
