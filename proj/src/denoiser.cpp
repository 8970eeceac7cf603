#include "sglab/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "sglab/error.hpp"
#include "sglab/log.hpp"
#include "sglab/rng.hpp"

namespace sg {

// ---- ParameterSet -----------------------------------------------------------

ParameterSet::ParameterSet(const ParameterSet& other) {
  entries_.reserve(other.entries_.size());
  for (const auto& [name, t] : other.entries_) {
    entries_.emplace_back(name, Tensor::from(t.shape(), std::vector<double>(t.data().begin(), t.data().end()),
                                             t.requires_grad()));
  }
}

ParameterSet& ParameterSet::operator=(const ParameterSet& other) {
  if (this != &other) *this = ParameterSet(other);
  return *this;
}

void ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(value));
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw ConfigError("unknown parameter '" + name + "'");
}

Tensor& ParameterSet::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

std::size_t ParameterSet::value_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

std::vector<std::size_t> TokenBatch::counts() const {
  std::vector<std::size_t> c(samples());
  for (std::size_t s = 0; s < c.size(); ++s) c[s] = offsets[s + 1] - offsets[s];
  return c;
}

// ---- construction -------------------------------------------------------------

namespace {

constexpr double kRopeBase = 10000.0;

std::string block_name(int layer, const char* part) {
  return "block" + std::to_string(layer) + "." + part;
}

Tensor normal_tensor(Shape shape, double stddev, Engine& rng) {
  std::vector<double> v(shape_numel(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& x : v) x = stddev == 0.0 ? 0.0 : stddev * dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

Denoiser::Denoiser(DenoiserConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Engine rng = substream(seed, Stream::init);
  const auto d = static_cast<std::size_t>(config_.model_dim);
  const auto T = static_cast<std::size_t>(config_.tokens());
  const auto F = static_cast<std::size_t>(config_.time_features);
  const auto hidden = d * static_cast<std::size_t>(config_.mlp_ratio);
  const auto cols = static_cast<std::size_t>(config_.state_cols());
  auto lin = [&](std::size_t in, std::size_t out) {
    return normal_tensor({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  };

  if (config_.layout == TokenLayout::points) {
    params_.add("embed.in", lin(cols, T * d));
  } else {
    params_.add("embed.in", lin(cols, d));
  }
  params_.add("embed.mask", normal_tensor({1, d}, 1.0, rng));
  params_.add("time.w1", lin(F, d));
  params_.add("time.w2", lin(d, d));
  params_.add("cond.table", normal_tensor({static_cast<std::size_t>(config_.num_classes) + 1, d}, 1.0, rng));
  for (int l = 0; l < config_.num_layers; ++l) {
    params_.add(block_name(l, "mod"), normal_tensor({d, 6 * d}, 0.0, rng));
    params_.add(block_name(l, "wq"), lin(d, d));
    params_.add(block_name(l, "wk"), lin(d, d));
    params_.add(block_name(l, "wv"), lin(d, d));
    params_.add(block_name(l, "wo"), lin(d, d));
    params_.add(block_name(l, "mlp1"), lin(d, hidden));
    params_.add(block_name(l, "mlp2"), lin(hidden, d));
  }
  params_.add("final.mod", normal_tensor({d, 2 * d}, 0.0, rng));
  const std::size_t head_in = config_.layout == TokenLayout::points ? T * d : d;
  params_.add("head.out", normal_tensor({head_in, cols}, 0.1 / std::sqrt(static_cast<double>(head_in)), rng));
}

void Denoiser::perturb(double stddev, std::uint64_t seed) {
  Engine rng = substream(seed, Stream::init, {0xBEEF});
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& [name, t] : params_) {
    for (auto& x : t.mutable_data()) x = dist(rng);
  }
}

// ---- embeddings -----------------------------------------------------------------

Tensor Denoiser::embed_condition(std::span<const Condition> conds) const {
  std::vector<std::size_t> rows(conds.size());
  for (std::size_t s = 0; s < conds.size(); ++s) {
    if (conds[s].is_null()) {
      rows[s] = static_cast<std::size_t>(config_.num_classes);
    } else {
      if (conds[s].label < 0 || conds[s].label >= config_.num_classes) {
        throw DomainError("condition label " + std::to_string(conds[s].label) + " outside [0, " +
                          std::to_string(config_.num_classes) + ")");
      }
      rows[s] = static_cast<std::size_t>(conds[s].label);
    }
  }
  return gather_rows(params_.get("cond.table"), rows);
}

Tensor Denoiser::embed_time(std::span<const double> times) const {
  const std::size_t half = static_cast<std::size_t>(config_.time_features) / 2;
  std::vector<double> feat(times.size() * 2 * half);
  for (std::size_t s = 0; s < times.size(); ++s) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = 1000.0 * std::exp(-std::log(kRopeBase) * static_cast<double>(i) / static_cast<double>(half));
      feat[s * 2 * half + i] = std::cos(times[s] * freq);
      feat[s * 2 * half + half + i] = std::sin(times[s] * freq);
    }
  }
  Tensor f = Tensor::from({times.size(), 2 * half}, std::move(feat));
  return matmul(gelu(matmul(f, params_.get("time.w1"))), params_.get("time.w2"));
}

Tensor Denoiser::cond_activation(std::span<const double> times, std::span<const Condition> conds) const {
  return gelu(add(embed_time(times), embed_condition(conds)));
}

std::vector<double> Denoiser::rope_angles(std::span<const int> positions) const {
  const std::size_t pairs = static_cast<std::size_t>(config_.head_dim()) / 2;
  std::vector<double> angles(positions.size() * pairs);
  if (config_.layout == TokenLayout::points) {
    for (std::size_t r = 0; r < positions.size(); ++r) {
      for (std::size_t p = 0; p < pairs; ++p) {
        const double theta = std::pow(kRopeBase, -static_cast<double>(p) / static_cast<double>(pairs));
        angles[r * pairs + p] = positions[r] * theta;
      }
    }
  } else {
    // Axial: first half of the pairs rotate with the row, second with the column.
    const int per_side = config_.image_side / config_.patch_size;
    const std::size_t axis_pairs = pairs / 2;
    for (std::size_t r = 0; r < positions.size(); ++r) {
      const int row = positions[r] / per_side, col = positions[r] % per_side;
      for (std::size_t p = 0; p < axis_pairs; ++p) {
        const double theta = std::pow(kRopeBase, -static_cast<double>(p) / static_cast<double>(axis_pairs));
        angles[r * pairs + p] = row * theta;
        angles[r * pairs + axis_pairs + p] = col * theta;
      }
    }
  }
  return angles;
}

// ---- blocks -------------------------------------------------------------------------

Tensor Denoiser::attention_block(int layer, const TokenBatch& x, const Tensor& t_emb,
                                 const Tensor& c_emb) const {
  return block_impl(layer, x, gelu(add(t_emb, c_emb)));
}

Tensor Denoiser::block_impl(int layer, const TokenBatch& x, const Tensor& cond_act) const {
  if (layer < 0 || layer >= config_.num_layers) throw DimensionError("attention_block: bad layer index");
  if (x.tokens.rows() == 0) throw DimensionError("attention_block: empty token set");
  const auto d = static_cast<std::size_t>(config_.model_dim);
  const auto heads = static_cast<std::size_t>(config_.num_heads);
  const auto counts = x.counts();
  if (cond_act.rows() != counts.size()) throw DimensionError("attention_block: one condition row per sample");

  Tensor mod = repeat_rows(matmul(cond_act, params_.get(block_name(layer, "mod"))), counts);
  auto part = [&](std::size_t i) { return slice_cols(mod, i * d, (i + 1) * d); };
  const auto angles = rope_angles(x.positions);

  Tensor h = x.tokens;
  Tensor n1 = add(mul(rmsnorm(h), add_scalar(part(1), 1.0)), part(0));
  Tensor q = rope(matmul(n1, params_.get(block_name(layer, "wq"))), angles, heads);
  Tensor k = rope(matmul(n1, params_.get(block_name(layer, "wk"))), angles, heads);
  Tensor v = matmul(n1, params_.get(block_name(layer, "wv")));
  Tensor attn = matmul(segmented_attention(q, k, v, heads, x.offsets), params_.get(block_name(layer, "wo")));
  h = add(h, mul(part(2), attn));

  Tensor n2 = add(mul(rmsnorm(h), add_scalar(part(4), 1.0)), part(3));
  Tensor mlp = matmul(gelu(matmul(n2, params_.get(block_name(layer, "mlp1")))),
                      params_.get(block_name(layer, "mlp2")));
  return add(h, mul(part(5), mlp));
}

// ---- forward --------------------------------------------------------------------------

Tensor Denoiser::forward(const Tensor& state, std::span<const double> times,
                         std::span<const Condition> conds, std::span<const SparsityMask> masks,
                         ActivationTrace* trace) const {
  const std::size_t S = times.size();
  const auto T = static_cast<std::size_t>(config_.tokens());
  const auto d = static_cast<std::size_t>(config_.model_dim);
  const auto rows = static_cast<std::size_t>(config_.state_rows());
  const auto cols = static_cast<std::size_t>(config_.state_cols());
  if (conds.size() != S) throw DimensionError("forward: one condition per sample required");
  if (state.rank() != 2 || state.rows() != S * rows || state.cols() != cols) {
    throw DimensionError("forward: state must be " + std::to_string(S * rows) + "x" + std::to_string(cols));
  }
  for (double t : times) {
    if (!(t >= 0.0 && t <= 1.0)) throw DomainError("forward: t outside [0, 1]");
  }
  if (!masks.empty()) {
    if (masks.size() != S) throw DimensionError("forward: one mask per sample required");
    for (const auto& m : masks) {
      if (m.size() != T) throw DimensionError("forward: mask length must equal token count");
    }
  }
  bool any_drop = false;
  for (const auto& m : masks) any_drop = any_drop || !m.all_kept();
  if (any_drop && config_.sparsity == SparsityMode::dense) {
    warn("dense denoiser received a sparsity mask; mask ignored");
    any_drop = false;
  }
  if (trace) *trace = ActivationTrace{};

  // Token embedding.
  Tensor h;
  if (config_.layout == TokenLayout::points) {
    h = reshape(matmul(state, params_.get("embed.in")), {S * T, d});
  } else {
    h = matmul(state, params_.get("embed.in"));
  }
  TokenBatch batch;
  batch.positions.resize(S * T);
  batch.offsets.resize(S + 1);
  for (std::size_t s = 0; s < S; ++s) {
    batch.offsets[s] = s * T;
    for (std::size_t k = 0; k < T; ++k) batch.positions[s * T + k] = static_cast<int>(k);
  }
  batch.offsets[S] = S * T;

  std::vector<std::size_t> kept_rows, dropped_rows;
  if (any_drop) {
    for (std::size_t s = 0; s < S; ++s) {
      for (std::size_t k = 0; k < T; ++k) {
        (masks[s].keep[k] ? kept_rows : dropped_rows).push_back(s * T + k);
      }
    }
  }
  if (any_drop && config_.sparsity == SparsityMode::mask) {
    const std::vector<std::size_t> n_dropped{dropped_rows.size()};
    h = place_rows(h, repeat_rows(params_.get("embed.mask"), n_dropped), dropped_rows);
  }
  const bool routing = any_drop && config_.sparsity == SparsityMode::route;
  if (routing) {
    for (std::size_t s = 0; s < S; ++s) {
      if (masks[s].kept_count() == 0) {
        throw DegenerateMaskError("forward: routing mask drops every token of sample " + std::to_string(s));
      }
    }
  }

  const Tensor act = cond_activation(times, conds);
  const RouteSpec route = config_.route;
  for (int l = 0; l < config_.num_layers; ++l) {
    if (routing && l == route.start_layer) {
      TokenBatch sub;
      sub.tokens = gather_rows(h, kept_rows);
      sub.offsets.assign(1, 0);
      for (std::size_t s = 0; s < S; ++s) sub.offsets.push_back(sub.offsets.back() + masks[s].kept_count());
      sub.positions.reserve(kept_rows.size());
      for (auto r : kept_rows) sub.positions.push_back(batch.positions[r]);
      for (int m = route.start_layer; m <= route.end_layer; ++m) {
        if (trace) trace->layer_inputs.push_back(sub.tokens);
        sub.tokens = block_impl(m, sub, act);
      }
      Tensor entry = h;
      h = place_rows(entry, sub.tokens, kept_rows);
      if (trace) {
        trace->route_entry = entry;
        trace->route_exit = h;
        trace->dropped_rows = dropped_rows;
      }
      l = route.end_layer;
      continue;
    }
    if (trace) trace->layer_inputs.push_back(h);
    batch.tokens = h;
    h = block_impl(l, batch, act);
  }
  if (trace) trace->final_tokens = h;

  const std::vector<std::size_t> per_sample(S, T);
  Tensor fmod = repeat_rows(matmul(act, params_.get("final.mod")), per_sample);
  h = add(mul(rmsnorm(h), add_scalar(slice_cols(fmod, d, 2 * d), 1.0)), slice_cols(fmod, 0, d));
  if (config_.layout == TokenLayout::points) {
    return matmul(reshape(h, {S, T * d}), params_.get("head.out"));
  }
  return matmul(h, params_.get("head.out"));
}

}  // namespace sg
