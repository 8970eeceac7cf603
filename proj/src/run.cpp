#include "sglab/run.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "sglab/error.hpp"

#ifndef SGLAB_GIT_DESCRIBE
#define SGLAB_GIT_DESCRIBE "unknown"
#endif

namespace sg {

namespace fs = std::filesystem;

std::string git_describe() { return SGLAB_GIT_DESCRIBE; }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_manifest(const fs::path& dir, const Manifest& m) {
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.txt", std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (dir / "manifest.txt").string());
  out << "subcommand = " << m.subcommand << '\n'
      << "command = " << m.command << '\n'
      << "seed = " << m.seed << '\n'
      << "version = " << git_describe() << '\n'
      << "started = " << m.started << '\n'
      << "finished = " << m.finished << '\n'
      << "config = config.txt\n"
      << "rerun = sglab " << m.subcommand << " --config " << (dir / "config.txt").string() << " --out <dir>\n";
  for (const auto& [k, v] : m.extra) out << k << " = " << v << '\n';
}

std::map<std::string, std::string> read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw FormatError("no manifest in " + dir.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return kv;
}

void write_run_config(const fs::path& dir, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.txt", std::ios::trunc);
  if (!out) throw FormatError("cannot write " + (dir / "config.txt").string());
  out << serialize_config(cfg);
}

fs::path checkpoint_path(const fs::path& run, std::uint64_t iteration) {
  char name[32];
  std::snprintf(name, sizeof name, "iter_%08llu.sglb", static_cast<unsigned long long>(iteration));
  return run / "checkpoints" / name;
}

std::vector<fs::path> list_checkpoints(const fs::path& run) {
  std::vector<fs::path> out;
  const fs::path dir = run / "checkpoints";
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string n = e.path().filename().string();
    if (n.rfind("iter_", 0) == 0 && e.path().extension() == ".sglb") out.push_back(e.path());
  }
  // Zero-padded names sort by iteration.
  std::sort(out.begin(), out.end());
  return out;
}

fs::path resolve_checkpoint(const fs::path& run, const std::string& ref) {
  if (ref != "" && ref != "final" && ref != "early" && ref != "init") return ref;
  if (run.empty()) throw ConfigError("checkpoint reference '" + ref + "' needs input.run");
  const auto all = list_checkpoints(run);
  if (all.empty()) throw ConfigError("no checkpoints in " + run.string());
  if (ref == "" || ref == "final") return all.back();
  if (ref == "init") {
    if (all.front().filename() != checkpoint_path(run, 0).filename()) {
      throw ConfigError(run.string() + " has no iteration-0 checkpoint");
    }
    return all.front();
  }
  for (const auto& p : all) {
    if (p.filename() != checkpoint_path(run, 0).filename() && p != all.back()) return p;
  }
  throw ConfigError(run.string() + " has no early checkpoint (set train.checkpoint_fractions)");
}

}  // namespace sg
