#include "sglab/denoiser_config.hpp"

#include <algorithm>

#include "sglab/error.hpp"

namespace sg {

std::string to_string(SparsityMode m) {
  switch (m) {
    case SparsityMode::dense: return "dense";
    case SparsityMode::mask: return "mask";
    case SparsityMode::route: return "route";
  }
  return "?";
}

SparsityMode parse_sparsity_mode(const std::string& s) {
  if (s == "dense") return SparsityMode::dense;
  if (s == "mask") return SparsityMode::mask;
  if (s == "route") return SparsityMode::route;
  throw ConfigError("unknown sparsity mode '" + s + "' (dense|mask|route)");
}

std::string to_string(TokenLayout l) {
  return l == TokenLayout::points ? "points" : "image";
}

TokenLayout parse_token_layout(const std::string& s) {
  if (s == "points") return TokenLayout::points;
  if (s == "image") return TokenLayout::image;
  throw ConfigError("unknown token layout '" + s + "' (points|image)");
}

int DenoiserConfig::tokens() const {
  if (layout == TokenLayout::points) return num_tokens;
  const int per_side = image_side / patch_size;
  return per_side * per_side;
}

int DenoiserConfig::state_rows() const {
  return layout == TokenLayout::points ? 1 : tokens();
}

int DenoiserConfig::state_cols() const {
  return layout == TokenLayout::points ? data_dim : patch_size * patch_size * channels;
}

int DenoiserConfig::sample_dim() const { return state_rows() * state_cols(); }

void DenoiserConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("denoiser config: " + m); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (model_dim < 2 || num_heads < 1) fail("model_dim and num_heads must be positive");
  if (model_dim % num_heads != 0) fail("model_dim must be divisible by num_heads");
  if (head_dim() % 2 != 0) fail("head dim must be even for rotary embeddings");
  if (layout == TokenLayout::image && head_dim() % 4 != 0) {
    fail("image layout needs head dim divisible by 4 (axial rotary)");
  }
  if (mlp_ratio < 1) fail("mlp_ratio must be >= 1");
  if (num_classes < 1) fail("num_classes must be >= 1");
  if (time_features < 2 || time_features % 2 != 0) fail("time_features must be even and >= 2");
  if (layout == TokenLayout::points) {
    if (data_dim < 1 || num_tokens < 1) fail("points layout needs data_dim, num_tokens >= 1");
  } else {
    if (patch_size < 1 || image_side < patch_size || image_side % patch_size != 0) {
      fail("image_side must be a positive multiple of patch_size");
    }
    if (channels < 1) fail("channels must be >= 1");
  }
  if (sparsity == SparsityMode::route) {
    if (!(route.start_layer >= 0 && route.start_layer < route.end_layer &&
          route.end_layer < num_layers)) {
      fail("route r_" + std::to_string(route.start_layer) + "->" +
           std::to_string(route.end_layer) + " violates 0 <= i < j < num_layers");
    }
  }
}

DenoiserConfig xl2_preset() {
  DenoiserConfig c;
  c.num_layers = 28;
  c.model_dim = 1152;
  c.num_heads = 16;
  c.mlp_ratio = 4;
  c.layout = TokenLayout::image;
  c.image_side = 32;
  c.patch_size = 2;
  c.channels = 4;
  c.num_classes = 1000;
  c.time_features = 256;
  c.sparsity = SparsityMode::route;
  c.route = {2, 24};
  return c;
}

DenoiserConfig desk_preset() { return DenoiserConfig{}; }

std::size_t SparsityMask::kept_count() const {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{1}));
}

}  // namespace sg
