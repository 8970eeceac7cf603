#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "sglab/checkpoint.hpp"
#include "sglab/cli.hpp"
#include "sglab/config.hpp"
#include "sglab/csv.hpp"
#include "sglab/dataset.hpp"
#include "sglab/error.hpp"
#include "sglab/run.hpp"
#include "sglab/sweep.hpp"
#include "sglab/train.hpp"
#include "test_util.hpp"

using namespace sg;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_experiment(std::uint64_t seed = 0) {
  ExperimentConfig c;
  c.seed = seed;
  c.denoiser.num_layers = 3;
  c.denoiser.model_dim = 16;
  c.denoiser.num_heads = 2;
  c.denoiser.mlp_ratio = 2;
  c.denoiser.time_features = 8;
  c.denoiser.route = {1, 2};
  c.loss.lambda = 0.0;  // routing trains on the flow term alone
  c.optim.iterations = 150;
  c.optim.batch = 64;
  c.optim.lr = 3e-3;
  c.train.log_every = 25;
  c.sampler.num_steps = 6;
  c.sweep.gamma_strong = {0.0, 0.4};
  c.sweep.gamma_weak = {0.0, 0.4, 0.8};
  c.sweep.omega = {1.0, 1.5};
  c.sweep.samples_per_cell = 96;
  c.sweep.reference_size = 512;
  c.sweep.diversity_pairs = 1000;
  return c;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("sglab_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "sglab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

// ---- datasets ---------------------------------------------------------------------

TEST(Dataset, Gaussians8ClassMeans) {
  const SampleSet s = make_dataset("gaussians8", 16000, 3);
  ASSERT_EQ(s.size(), 16000u);
  std::vector<double> sx(8), sy(8);
  std::vector<int> count(8);
  for (std::size_t i = 0; i < s.size(); ++i) {
    ASSERT_EQ(s.conds[i].label, static_cast<int>(i % 8));
    sx[i % 8] += s.row(i)[0];
    sy[i % 8] += s.row(i)[1];
    ++count[i % 8];
  }
  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * std::numbers::pi * k / 8.0;
    EXPECT_NEAR(sx[k] / count[k], kGaussians8Radius * std::cos(a), 0.02);
    EXPECT_NEAR(sy[k] / count[k], kGaussians8Radius * std::sin(a), 0.02);
  }
}

TEST(Dataset, ShapesAndDeterminism) {
  for (const auto& name : dataset_names()) {
    const DatasetInfo info = dataset_info(name);
    EXPECT_EQ(make_dataset(name, 0, 1).size(), 0u);
    const SampleSet a = make_dataset(name, 50, 1), b = make_dataset(name, 50, 1), c = make_dataset(name, 50, 2);
    EXPECT_EQ(a.dim, info.dim);
    EXPECT_EQ(a.values.size(), 50u * static_cast<std::size_t>(info.dim));
    EXPECT_TRUE(sgtest::bitwise_equal(a.values, b.values)) << name;
    EXPECT_NE(a.values, c.values) << name;
  }
  EXPECT_THROW(dataset_info("swiss-roll"), ConfigError);
}

TEST(Dataset, CheckerboardCellsAreDark) {
  const SampleSet s = make_dataset("checkerboard", 800, 4);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int col = static_cast<int>(std::floor(s.row(i)[0] + 2.0));
    const int row = static_cast<int>(std::floor(s.row(i)[1] + 2.0));
    EXPECT_EQ((row + col) % 2, 0) << i;
  }
}

// ---- config ------------------------------------------------------------------------

TEST(Config, RoundTrip) {
  ExperimentConfig c = small_experiment(17);
  c.guidance = guidance_preset("sg-fid");
  c.sweep.omega = {1.1, 2.0 / 3.0};
  const std::string text = serialize_config(c);
  const ExperimentConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(back.denoiser, c.denoiser);
  EXPECT_EQ(back.sweep.omega, c.sweep.omega);
  EXPECT_EQ(back.guidance.schedule_weak, c.guidance.schedule_weak);
  EXPECT_EQ(config_keys().size(), static_cast<std::size_t>(std::count(text.begin(), text.end(), '=')));
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("denoiser.num_layerz = 3\n"), ConfigError);
  try {
    parse_config("# header\nsampler.steps = 4\nsampler.steps = four\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  ExperimentConfig c;
  EXPECT_THROW(apply_override(c, "sampler.steps"), ConfigError);
  apply_override(c, "guidance.preset=sg-flops");
  EXPECT_EQ(c.guidance.schedule_weak, GammaSchedule::constant(0.9));
  apply_override(c, "guidance.gamma_weak = 0.7");
  EXPECT_EQ(c.guidance.schedule_weak, GammaSchedule::constant(0.7));
  EXPECT_EQ(format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(parse_double(format_double(1.0 / 3.0), "x"), 1.0 / 3.0);
}

// ---- checkpoints ----------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir;
  ExperimentConfig cfg = small_experiment();
  cfg.resolve();
  Denoiser m(cfg.denoiser, 4);
  m.perturb(0.2, 4);
  const fs::path p = dir.path() / "m.sglb";
  save_checkpoint(p, make_checkpoint(m, 123, "state"));
  const Checkpoint c = load_checkpoint(p);
  EXPECT_EQ(c.iteration, 123u);
  EXPECT_EQ(c.rng_state, "state");
  EXPECT_EQ(c.config, m.config());
  Denoiser back = model_from_checkpoint(c);
  for (const auto& [name, t] : m.parameters()) {
    EXPECT_TRUE(sgtest::bitwise_equal(t, back.parameters().get(name))) << name;
  }
  std::mt19937_64 rng(1);
  Tensor x = sgtest::random_tensor({5, 2}, rng);
  const double times[] = {0.0, 0.2, 0.4, 0.6, 1.0};
  const Condition conds[] = {Condition::of(0), Condition::of(7), Condition::null(), Condition::of(3),
                             Condition::of(1)};
  EXPECT_TRUE(sgtest::bitwise_equal(m.forward(x, times, conds), back.forward(x, times, conds)));
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  TempDir dir;
  ExperimentConfig cfg = small_experiment();
  cfg.resolve();
  const fs::path p = dir.path() / "m.sglb";
  save_checkpoint(p, make_checkpoint(Denoiser(cfg.denoiser, 1), 0));
  const std::string bytes = slurp(p);

  const fs::path cut = dir.path() / "cut.sglb";
  std::ofstream(cut, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(load_checkpoint(cut), FormatError);

  const fs::path extra = dir.path() / "extra.sglb";
  std::ofstream(extra, std::ios::binary) << bytes << "x";
  EXPECT_THROW(load_checkpoint(extra), FormatError);

  const fs::path magic = dir.path() / "magic.sglb";
  std::ofstream(magic, std::ios::binary) << "SGLX" << bytes.substr(4);
  EXPECT_THROW(load_checkpoint(magic), FormatError);

  EXPECT_THROW(load_checkpoint(dir.path() / "missing.sglb"), FormatError);

  DenoiserConfig other = cfg.denoiser;
  other.model_dim = 32;
  Denoiser wrong(other, 1);
  EXPECT_THROW(load_parameters(wrong, load_checkpoint(p).parameters), FormatError);
}

// ---- training ---------------------------------------------------------------------------

TEST(Train, CheckpointCadence) {
  EXPECT_EQ(checkpoint_iterations({0.1}, 100), (std::vector<int>{10, 100}));
  EXPECT_EQ(checkpoint_iterations({0.5, 0.1, 0.5}, 100), (std::vector<int>{10, 50, 100}));
  EXPECT_EQ(checkpoint_iterations({0.1}, 5), (std::vector<int>{0, 5}));
  EXPECT_EQ(checkpoint_iterations({0.1}, 0), (std::vector<int>{0}));
  EXPECT_THROW(checkpoint_iterations({0.0}, 10), ConfigError);
}

TEST(Train, ZeroIterationsWritesInitialModel) {
  ExperimentConfig cfg = small_experiment();
  cfg.optim.iterations = 0;
  const TrainResult r = train(cfg);
  ASSERT_EQ(r.checkpoints.size(), 1u);
  EXPECT_EQ(r.checkpoints[0].iteration, 0u);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.initial_eval_loss, r.final_eval_loss);
}

TEST(Train, LossHalvesAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const TrainResult r = train(small_experiment(seed));
    EXPECT_LE(r.final_eval_loss, 0.5 * r.initial_eval_loss) << "seed " << seed;
    ASSERT_EQ(r.checkpoints.size(), 2u);
    EXPECT_EQ(r.checkpoints[0].iteration, 15u);
    EXPECT_EQ(r.log.back().iteration, 150);
  }
}

TEST(Train, RoutingProcessesFewerTokens) {
  ExperimentConfig cfg = small_experiment();
  cfg.optim.iterations = 4;
  cfg.train.log_every = 1;
  cfg.loss.lambda = 0.1;
  std::vector<std::size_t> active;
  TrainHooks hooks;
  hooks.on_log = [&](const TrainLogRow& r) { active.push_back(r.active_tokens); };
  sgtest::WarningCapture quiet;
  train(cfg, hooks);
  ASSERT_EQ(active.size(), 4u);
  const std::size_t dense_tokens = 64u * 4u;
  for (std::size_t a : active) EXPECT_EQ(a, dense_tokens / 2);
  // The routing model drops its auxiliary term with a warning.
  EXPECT_FALSE(quiet.messages.empty());

  cfg.denoiser.sparsity = SparsityMode::dense;
  active.clear();
  train(cfg, hooks);
  for (std::size_t a : active) EXPECT_EQ(a, dense_tokens);
}

TEST(Train, DeterministicGivenSeed) {
  ExperimentConfig cfg = small_experiment(3);
  cfg.optim.iterations = 10;
  const TrainResult a = train(cfg), b = train(cfg);
  for (const auto& [name, t] : a.checkpoints.back().parameters) {
    EXPECT_TRUE(sgtest::bitwise_equal(t, b.checkpoints.back().parameters.get(name))) << name;
  }
}

// ---- sweep -----------------------------------------------------------------------------

TEST(Sweep, Admissibility) {
  EXPECT_TRUE(cell_admissible(GuidanceMode::sg, 0.0, 0.0));
  EXPECT_TRUE(cell_admissible(GuidanceMode::sg, 0.2, 0.4));
  EXPECT_FALSE(cell_admissible(GuidanceMode::sg, 0.4, 0.4));
  EXPECT_FALSE(cell_admissible(GuidanceMode::sg, 0.6, 0.4));
  EXPECT_TRUE(cell_admissible(GuidanceMode::cfg_sg, 0.4, 0.4));
  EXPECT_FALSE(cell_admissible(GuidanceMode::cfg_sg, 0.6, 0.4));
  EXPECT_TRUE(cell_admissible(GuidanceMode::ag_sg, 0.6, 0.4));

  EXPECT_TRUE(cell_is_baseline(GuidanceMode::sg, 0, 0, 1.7));
  EXPECT_TRUE(cell_is_baseline(GuidanceMode::cfg_sg, 0, 0, 1.0));
  EXPECT_FALSE(cell_is_baseline(GuidanceMode::cfg_sg, 0, 0, 1.5));
  EXPECT_FALSE(cell_is_baseline(GuidanceMode::sg, 0, 0.2, 1.0));

  GuidanceConfig g;
  EXPECT_EQ(sweep_mode(g), GuidanceMode::sg);
  g.mode = GuidanceMode::cfg;
  EXPECT_THROW(sweep_mode(g), ConfigError);
}

class SweepRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new ExperimentConfig(small_experiment(1));
    cfg_->optim.iterations = 100;
    const TrainResult r = train(*cfg_);
    cfg_->resolve();
    model_ = new Denoiser(model_from_checkpoint(r.checkpoints.back()));
  }
  static void TearDownTestSuite() {
    delete model_;
    delete cfg_;
  }
  static ExperimentConfig* cfg_;
  static Denoiser* model_;
};
ExperimentConfig* SweepRun::cfg_ = nullptr;
Denoiser* SweepRun::model_ = nullptr;

TEST_F(SweepRun, RowsFollowGridAndStatus) {
  const SweepResult res = run_sweep({model_, nullptr}, *cfg_);
  ASSERT_EQ(res.rows.size(), 2u * 3u * 2u);
  EXPECT_EQ(res.reference.size(), 512u);
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    const SweepRow& r = res.rows[i];
    const bool admissible = cell_admissible(GuidanceMode::sg, r.gamma_strong, r.gamma_weak);
    if (!admissible) {
      EXPECT_EQ(r.status, CellStatus::inadmissible);
      EXPECT_TRUE(std::isnan(r.fd));
      EXPECT_EQ(res.samples[i].size(), 0u);
      continue;
    }
    EXPECT_TRUE(r.status == CellStatus::ok || r.status == CellStatus::baseline);
    EXPECT_TRUE(std::isfinite(r.fd));
    EXPECT_EQ(res.samples[i].size(), 96u);
    EXPECT_EQ(r.seed, cfg_->sampler.seed);
  }
  EXPECT_EQ(res.rows.front().status, CellStatus::baseline);
}

TEST_F(SweepRun, BaselineCellEqualsUnguidedSampling) {
  const SweepResult res = run_sweep({model_, nullptr}, *cfg_);
  std::vector<Condition> conds;
  for (std::size_t i = 0; i < 96; ++i) conds.push_back(Condition::of(static_cast<int>(i % 8)));
  const SampleSet unguided = generate({model_, nullptr}, conds, GuidanceConfig{}, cfg_->sampler);
  std::size_t baselines = 0;
  for (std::size_t i = 0; i < res.rows.size(); ++i) {
    if (res.rows[i].status != CellStatus::baseline) continue;
    ++baselines;
    EXPECT_TRUE(sgtest::bitwise_equal(res.samples[i].values, unguided.values));
    EXPECT_EQ(res.rows[i].fd, sweep_metric(*cfg_, unguided, res.reference));
  }
  EXPECT_EQ(baselines, 2u);  // (0, 0) at both omegas
}

TEST_F(SweepRun, WorkerCountDoesNotChangeResults) {
  TempDir dir;
  ExperimentConfig c = *cfg_;
  c.sweep.workers = 1;
  write_sweep_csv(dir.path() / "a.csv", run_sweep({model_, nullptr}, c).rows);
  c.sweep.workers = 3;
  write_sweep_csv(dir.path() / "b.csv", run_sweep({model_, nullptr}, c).rows);
  EXPECT_EQ(slurp(dir.path() / "a.csv"), slurp(dir.path() / "b.csv"));

  const auto rows = read_sweep_csv(dir.path() / "a.csv");
  ASSERT_EQ(rows.size(), 12u);
  EXPECT_EQ(rows[5].gamma_weak, 0.8);
}

TEST_F(SweepRun, DistinctSeeds) {
  ExperimentConfig c = *cfg_;
  c.sweep.distinct_seeds = true;
  c.sweep.gamma_strong = {0.0};
  c.sweep.gamma_weak = {0.4};
  const SweepResult res = run_sweep({model_, nullptr}, c);
  ASSERT_EQ(res.rows.size(), 2u);
  EXPECT_NE(res.rows[0].seed, res.rows[1].seed);
}

// ---- command line -----------------------------------------------------------------------

namespace {

std::vector<std::string> small_sets() {
  return {"--set", "denoiser.num_layers=3", "--set", "denoiser.model_dim=16", "--set", "denoiser.num_heads=2",
          "--set", "denoiser.mlp_ratio=2",  "--set", "denoiser.time_features=8", "--set", "denoiser.route_start=1",
          "--set", "denoiser.route_end=2",  "--set", "optim.batch=32",           "--set", "sampler.steps=4"};
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
  EXPECT_EQ(cli({"flops", "--set", "nonsense.key=1"}).code, 2);
  EXPECT_EQ(cli({"flops", "--arch", "xl3"}).code, 2);
  EXPECT_EQ(cli({"inspect", "/nonexistent/file.sglb"}).code, 1);
  TempDir dir;
  EXPECT_EQ(cli({"sweep", "--out", (dir.path() / "s").string()}).code, 2);  // no model
}

TEST(Cli, FlopsTable) {
  const CliResult r = cli({"flops", "--arch", "xl2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("+SG_FLOPS"), std::string::npos);
  EXPECT_NE(r.out.find("119.2"), std::string::npos);
}

TEST(Cli, EmptySampleWritesHeaderOnly) {
  TempDir dir;
  sgtest::WarningCapture quiet;
  const CliResult r = cli({"sample", "--mode", "none", "--n", "0", "--out", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(dir.path() / "samples" / "samples.csv"), "label,x0,x1\n");
  EXPECT_TRUE(fs::exists(dir.path() / "manifest.txt"));
}

TEST(Cli, TrainSweepEvalRerun) {
  TempDir dir;
  sgtest::WarningCapture quiet;
  const std::string run = (dir.path() / "train").string();
  CliResult r = cli(concat({"train", "--iterations", "40", "--out", run}, small_sets()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(list_checkpoints(run).size(), 2u);
  EXPECT_EQ(read_manifest(run).at("subcommand"), "train");

  const std::string sweep = (dir.path() / "sweep").string();
  r = cli({"sweep", "--run", run, "--out", sweep, "--samples", "64", "--set", "sweep.gamma_strong=0,0.4", "--set",
           "sweep.gamma_weak=0.4,0.8", "--set", "sweep.omega=1.5", "--set", "sweep.reference_size=256", "--set",
           "sweep.diversity_pairs=500"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_sweep_csv(fs::path(sweep) / "sweep.csv");
  ASSERT_EQ(rows.size(), 4u);

  // eval on a cell's sample file reproduces its fd and diversity columns.
  r = cli({"eval", "--reference", sweep + "/samples/reference.csv", "--generated", sweep + "/samples/cell_000.csv",
           "--pairs", "500", "--seed", std::to_string(rows[0].seed)});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("fd = " + format_double(rows[0].fd) + "\n"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("diversity = " + format_double(rows[0].diversity) + "\n"), std::string::npos) << r.out;

  // The manifest's rerun line reproduces sweep.csv bitwise.
  const auto manifest = read_manifest(sweep);
  const std::string rerun = manifest.at("rerun");
  EXPECT_EQ(rerun, "sglab sweep --config " + (fs::path(sweep) / "config.txt").string() + " --out <dir>");
  const std::string again = (dir.path() / "again").string();
  r = cli({"sweep", "--config", (fs::path(sweep) / "config.txt").string(), "--out", again});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(fs::path(sweep) / "sweep.csv"), slurp(fs::path(again) / "sweep.csv"));

  r = cli({"inspect", run});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("checkpoints = 2"), std::string::npos);
}
