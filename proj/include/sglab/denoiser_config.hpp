#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace sg {

enum class SparsityMode : std::uint32_t { dense = 0, mask = 1, route = 2 };
// points: a d-dimensional point lifted to num_tokens learned pseudo-tokens.
// image: a square grid (channels x side x side) split into patch tokens.
enum class TokenLayout : std::uint32_t { points = 0, image = 1 };

std::string to_string(SparsityMode m);
SparsityMode parse_sparsity_mode(const std::string& s);
std::string to_string(TokenLayout l);
TokenLayout parse_token_layout(const std::string& s);

// Layers start_layer..end_layer (inclusive) process only the kept tokens;
// dropped tokens skip them and are reinserted after end_layer.
struct RouteSpec {
  int start_layer = 1;
  int end_layer = 5;

  int span_layers() const { return end_layer - start_layer + 1; }
  bool contains(int layer) const { return layer >= start_layer && layer <= end_layer; }
  bool operator==(const RouteSpec&) const = default;
};

struct DenoiserConfig {
  int num_layers = 6;
  int model_dim = 64;
  int num_heads = 4;
  int mlp_ratio = 4;
  TokenLayout layout = TokenLayout::points;
  int data_dim = 2;      // points layout
  int num_tokens = 4;    // points layout; image layout derives it
  int image_side = 8;    // image layout
  int patch_size = 2;    // image layout
  int channels = 1;      // image layout
  int num_classes = 8;
  int time_features = 32;  // sinusoidal features fed to the time MLP
  SparsityMode sparsity = SparsityMode::route;
  RouteSpec route{};

  // Throws ConfigError when any invariant fails.
  void validate() const;

  int tokens() const;
  int head_dim() const { return model_dim / num_heads; }
  // Rows and columns of one sample's flow state (and velocity).
  int state_rows() const;
  int state_cols() const;
  // Flat values per sample in data space.
  int sample_dim() const;

  bool operator==(const DenoiserConfig&) const = default;
};

// Architecture presets.
// xl2: the 28-layer d=1152 latent backbone (32x32x4 latents, patch 2), route 2->24.
DenoiserConfig xl2_preset();
// desk: the paper backbone scaled down for CPU experiments on 2D points.
DenoiserConfig desk_preset();

// Class label or the null (unconditional) condition.
struct Condition {
  enum class Kind : std::uint8_t { label, null };
  Kind kind = Kind::null;
  int label = 0;

  static Condition null() { return {}; }
  static Condition of(int label) { return {Kind::label, label}; }
  bool is_null() const { return kind == Kind::null; }
  bool operator==(const Condition&) const = default;
};

// Binary keep/drop flags for the tokens of one sample.
struct SparsityMask {
  std::vector<std::uint8_t> keep;
  double gamma = 0.0;

  static SparsityMask all_kept(std::size_t tokens) {
    return {std::vector<std::uint8_t>(tokens, 1), 0.0};
  }
  std::size_t size() const { return keep.size(); }
  std::size_t kept_count() const;
  std::size_t dropped_count() const { return size() - kept_count(); }
  bool all_kept() const { return kept_count() == size(); }
  bool operator==(const SparsityMask&) const = default;
};

}  // namespace sg
