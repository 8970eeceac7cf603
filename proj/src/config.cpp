#include "sglab/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "sglab/dataset.hpp"
#include "sglab/error.hpp"

namespace sg {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const std::string& what) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw ConfigError(what + ": '" + s + "' is not a number");
  return v;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

long long parse_int(const std::string& s, const std::string& what) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError(what + ": '" + s + "' is not an integer");
  return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& what) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError(what + ": '" + s + "' is not a non-negative integer");
  }
  return v;
}

bool parse_bool(const std::string& s, const std::string& what) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(what + ": '" + s + "' is not a boolean");
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? ", " : "") + format_double(v[i]);
  return out;
}

struct Entry {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <class Ref>
Entry real(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return format_double(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_double(v, key); }};
}

template <class Ref>
Entry integer(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return std::to_string(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, const std::string& v) {
            using T = std::remove_reference_t<decltype(ref(c))>;
            if constexpr (std::is_unsigned_v<T>) {
              ref(c) = static_cast<T>(parse_u64(v, key));
            } else {
              ref(c) = static_cast<T>(parse_int(v, key));
            }
          }};
}

template <class Ref>
Entry boolean(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return ref(const_cast<ExperimentConfig&>(c)) ? "true" : "false"; },
          [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_bool(v, key); }};
}

template <class Ref>
Entry text(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return ref(const_cast<ExperimentConfig&>(c)); },
          [ref](ExperimentConfig& c, const std::string& v) { ref(c) = v; }};
}

template <class Ref>
Entry list(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return join(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, const std::string& v) { ref(c) = parse_double_list(v, key); }};
}

std::string schedule_kind(const GammaSchedule& s) {
  return s.kind == GammaSchedule::Kind::constant ? "constant" : "cosine";
}

GammaSchedule::Kind parse_schedule_kind(const std::string& v) {
  if (v == "constant") return GammaSchedule::Kind::constant;
  if (v == "cosine") return GammaSchedule::Kind::cosine;
  throw ConfigError("schedule must be constant or cosine, got '" + v + "'");
}

#define REF(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = [] {
    std::vector<Entry> e;
    e.push_back(text("experiment.name", REF(name)));
    e.push_back(integer("experiment.seed", REF(seed)));
    e.push_back(text("experiment.dataset", REF(dataset)));

    e.push_back(integer("denoiser.num_layers", REF(denoiser.num_layers)));
    e.push_back(integer("denoiser.model_dim", REF(denoiser.model_dim)));
    e.push_back(integer("denoiser.num_heads", REF(denoiser.num_heads)));
    e.push_back(integer("denoiser.mlp_ratio", REF(denoiser.mlp_ratio)));
    e.push_back({"denoiser.layout", [](const ExperimentConfig& c) { return to_string(c.denoiser.layout); },
                 [](ExperimentConfig& c, const std::string& v) { c.denoiser.layout = parse_token_layout(v); }});
    e.push_back(integer("denoiser.data_dim", REF(denoiser.data_dim)));
    e.push_back(integer("denoiser.num_tokens", REF(denoiser.num_tokens)));
    e.push_back(integer("denoiser.image_side", REF(denoiser.image_side)));
    e.push_back(integer("denoiser.patch_size", REF(denoiser.patch_size)));
    e.push_back(integer("denoiser.channels", REF(denoiser.channels)));
    e.push_back(integer("denoiser.num_classes", REF(denoiser.num_classes)));
    e.push_back(integer("denoiser.time_features", REF(denoiser.time_features)));
    e.push_back({"denoiser.sparsity", [](const ExperimentConfig& c) { return to_string(c.denoiser.sparsity); },
                 [](ExperimentConfig& c, const std::string& v) { c.denoiser.sparsity = parse_sparsity_mode(v); }});
    e.push_back(integer("denoiser.route_start", REF(denoiser.route.start_layer)));
    e.push_back(integer("denoiser.route_end", REF(denoiser.route.end_layer)));

    e.push_back(real("loss.lambda", REF(loss.lambda)));
    e.push_back(real("loss.train_gamma", REF(loss.train_gamma)));
    e.push_back(real("loss.cond_dropout", REF(loss.cond_dropout)));

    e.push_back(real("optim.lr", REF(optim.lr)));
    e.push_back(real("optim.beta1", REF(optim.beta1)));
    e.push_back(real("optim.beta2", REF(optim.beta2)));
    e.push_back(real("optim.eps", REF(optim.eps)));
    e.push_back(real("optim.weight_decay", REF(optim.weight_decay)));
    e.push_back(real("optim.grad_clip", REF(optim.grad_clip)));
    e.push_back(integer("optim.warmup", REF(optim.warmup)));
    e.push_back(integer("optim.iterations", REF(optim.iterations)));
    e.push_back(integer("optim.batch", REF(optim.batch)));

    e.push_back(list("train.checkpoint_fractions", REF(train.checkpoint_fractions)));
    e.push_back(integer("train.log_every", REF(train.log_every)));
    e.push_back(text("train.init", REF(train.init)));

    e.push_back({"guidance.mode", [](const ExperimentConfig& c) { return to_string(c.guidance.mode); },
                 [](ExperimentConfig& c, const std::string& v) { c.guidance.mode = parse_guidance_mode(v); }});
    e.push_back(real("guidance.omega", REF(guidance.omega)));
    e.push_back({"guidance.strong_schedule",
                 [](const ExperimentConfig& c) { return schedule_kind(c.guidance.schedule_strong); },
                 [](ExperimentConfig& c, const std::string& v) { c.guidance.schedule_strong.kind = parse_schedule_kind(v); }});
    e.push_back(real("guidance.gamma_strong", REF(guidance.schedule_strong.start_value)));
    e.push_back(real("guidance.gamma_strong_end", REF(guidance.schedule_strong.end_value)));
    e.push_back({"guidance.weak_schedule",
                 [](const ExperimentConfig& c) { return schedule_kind(c.guidance.schedule_weak); },
                 [](ExperimentConfig& c, const std::string& v) { c.guidance.schedule_weak.kind = parse_schedule_kind(v); }});
    e.push_back(real("guidance.gamma_weak", REF(guidance.schedule_weak.start_value)));
    e.push_back(real("guidance.gamma_weak_end", REF(guidance.schedule_weak.end_value)));
    e.push_back(boolean("guidance.shared_mask", REF(guidance.shared_mask)));
    e.push_back(boolean("guidance.fixed_count_masks", REF(guidance.fixed_count_masks)));
    e.push_back({"guidance.aux_checkpoint",
                 [](const ExperimentConfig& c) { return c.guidance.aux_checkpoint.value_or(""); },
                 [](ExperimentConfig& c, const std::string& v) {
                   if (v.empty()) {
                     c.guidance.aux_checkpoint.reset();
                   } else {
                     c.guidance.aux_checkpoint = v;
                   }
                 }});

    e.push_back(integer("sampler.steps", REF(sampler.num_steps)));
    e.push_back(integer("sampler.seed", REF(sampler.seed)));
    e.push_back(integer("sampler.batch", REF(sampler.batch_size)));

    e.push_back(integer("sample.n", REF(sample.n)));
    e.push_back(text("sample.label", REF(sample.label)));

    e.push_back(list("sweep.gamma_strong", REF(sweep.gamma_strong)));
    e.push_back(list("sweep.gamma_weak", REF(sweep.gamma_weak)));
    e.push_back(list("sweep.omega", REF(sweep.omega)));
    e.push_back(integer("sweep.samples_per_cell", REF(sweep.samples_per_cell)));
    e.push_back(integer("sweep.reference_size", REF(sweep.reference_size)));
    e.push_back(integer("sweep.fid_subset_size", REF(sweep.fid_subset_size)));
    e.push_back(text("sweep.metric", REF(sweep.metric)));
    e.push_back(integer("sweep.diversity_pairs", REF(sweep.diversity_pairs)));
    e.push_back(integer("sweep.workers", REF(sweep.workers)));
    e.push_back(boolean("sweep.distinct_seeds", REF(sweep.distinct_seeds)));
    e.push_back(boolean("sweep.write_samples", REF(sweep.write_samples)));

    e.push_back(text("input.run", REF(input.run)));
    e.push_back(text("input.checkpoint", REF(input.checkpoint)));
    return e;
  }();
  return entries;
}

#undef REF

const Entry& find_entry(const std::string& key) {
  const auto& r = registry();
  auto it = std::find_if(r.begin(), r.end(), [&](const Entry& e) { return e.key == key; });
  if (it == r.end()) throw ConfigError("unknown config key '" + key + "'");
  return *it;
}

}  // namespace

std::vector<double> parse_double_list(const std::string& s, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_double(item, what));
  }
  return out;
}

void ExperimentConfig::resolve() {
  const DatasetInfo info = dataset_info(dataset);
  denoiser.layout = info.layout;
  denoiser.num_classes = info.num_classes;
  if (info.layout == TokenLayout::points) {
    denoiser.data_dim = info.dim;
  } else {
    denoiser.image_side = info.image_side;
    denoiser.channels = 1;
  }
}

void ExperimentConfig::validate() const {
  dataset_info(dataset);
  denoiser.validate();
  loss.validate();
  guidance.validate();
  sampler.validate();
  if (optim.iterations < 0) throw ConfigError("optim.iterations must be >= 0");
  if (optim.batch < 1) throw ConfigError("optim.batch must be >= 1");
  if (!(optim.lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
    throw ConfigError("optim.beta1/beta2 must lie in [0, 1)");
  }
  if (optim.grad_clip < 0.0 || optim.weight_decay < 0.0 || optim.warmup < 0) {
    throw ConfigError("optim.grad_clip, weight_decay and warmup must be >= 0");
  }
  for (double f : train.checkpoint_fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("train.checkpoint_fractions must lie in (0, 1]");
  }
  if (train.log_every < 1) throw ConfigError("train.log_every must be >= 1");
  if (sweep.gamma_strong.empty() || sweep.gamma_weak.empty() || sweep.omega.empty()) {
    throw ConfigError("sweep grids must be nonempty");
  }
  for (double g : sweep.gamma_strong) {
    if (!(g >= 0.0 && g < 1.0)) throw ConfigError("sweep.gamma_strong values must lie in [0, 1)");
  }
  for (double g : sweep.gamma_weak) {
    if (!(g >= 0.0 && g < 1.0)) throw ConfigError("sweep.gamma_weak values must lie in [0, 1)");
  }
  for (double w : sweep.omega) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("sweep.omega values must be finite and >= 0");
  }
  if (sweep.metric != "class-fd" && sweep.metric != "fd") throw ConfigError("sweep.metric must be class-fd or fd");
  if (sweep.samples_per_cell < 2 || sweep.reference_size < 2) {
    throw ConfigError("sweep.samples_per_cell and sweep.reference_size must be >= 2");
  }
  if (sweep.workers < 1) throw ConfigError("sweep.workers must be >= 1");
  if (sweep.diversity_pairs < 1) throw ConfigError("sweep.diversity_pairs must be >= 1");
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "guidance.preset") {
    cfg.guidance = guidance_preset(value);
    return;
  }
  if (key == "denoiser.preset") {
    if (value == "xl2") {
      cfg.denoiser = xl2_preset();
    } else if (value == "desk") {
      cfg.denoiser = desk_preset();
    } else {
      throw ConfigError("unknown denoiser preset '" + value + "' (desk|xl2)");
    }
    return;
  }
  find_entry(key).set(cfg, value);
  // A constant schedule has a single value; keep its end in step.
  auto& gs = cfg.guidance.schedule_strong;
  auto& gw = cfg.guidance.schedule_weak;
  if (key == "guidance.gamma_strong" && gs.kind == GammaSchedule::Kind::constant) gs.end_value = gs.start_value;
  if (key == "guidance.gamma_weak" && gw.kind == GammaSchedule::Kind::constant) gw.end_value = gw.start_value;
}

std::string get_config_value(const ExperimentConfig& cfg, const std::string& key) {
  return find_entry(key).get(cfg);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : registry()) keys.push_back(e.key);
  return keys;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& e : registry()) {
    const std::string s = e.key.substr(0, e.key.find('.'));
    if (s != section) {
      if (!section.empty()) out += '\n';
      section = s;
    }
    out += e.key + " = " + e.get(cfg) + '\n';
  }
  return out;
}

ExperimentConfig parse_config(const std::string& text, ExperimentConfig base) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    try {
      set_config_value(base, key, trim(line.substr(eq + 1)));
    } catch (const ConfigError& err) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + err.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' must be key=value");
  set_config_value(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

}  // namespace sg
