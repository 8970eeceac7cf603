#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "sglab/denoiser.hpp"
#include "sglab/error.hpp"
#include "sglab/flow.hpp"
#include "sglab/grad_check.hpp"
#include "sglab/sampler.hpp"
#include "test_util.hpp"

using namespace sg;
using sgtest::bitwise_equal;
using sgtest::random_tensor;

namespace {

DenoiserConfig tiny(SparsityMode mode, TokenLayout layout = TokenLayout::points) {
  DenoiserConfig c;
  c.num_layers = 4;
  c.model_dim = 8;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.num_tokens = 4;
  c.num_classes = 3;
  c.time_features = 8;
  c.sparsity = mode;
  c.route = {1, 2};
  c.layout = layout;
  if (layout == TokenLayout::image) {
    c.image_side = 4;
    c.patch_size = 2;
    c.channels = 1;
  }
  return c;
}

Denoiser perturbed(const DenoiserConfig& c, std::uint64_t seed = 1) {
  Denoiser m(c, seed);
  m.perturb(0.3, seed);
  return m;
}

struct Inputs {
  Tensor state;
  std::vector<double> times;
  std::vector<Condition> conds;
};

Inputs random_inputs(const DenoiserConfig& c, std::size_t S, std::mt19937_64& rng) {
  Inputs in;
  in.state = random_tensor({S * static_cast<std::size_t>(c.state_rows()), static_cast<std::size_t>(c.state_cols())},
                           rng, -2.0, 2.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t s = 0; s < S; ++s) {
    in.times.push_back(u(rng));
    in.conds.push_back(s % 2 ? Condition::null() : Condition::of(static_cast<int>(s % 3)));
  }
  return in;
}

std::vector<SparsityMask> random_masks(std::size_t S, std::size_t T, double gamma, Engine& rng) {
  std::vector<SparsityMask> masks;
  for (std::size_t s = 0; s < S; ++s) masks.push_back(flow::fixed_count_mask(T, gamma, rng, 1));
  return masks;
}

}  // namespace

TEST(Denoiser, ZeroInitBlocksAreIdentity) {
  Denoiser m(tiny(SparsityMode::dense), 3);
  std::mt19937_64 rng(1);
  TokenBatch b;
  b.tokens = random_tensor({4, 8}, rng);
  b.positions = {0, 1, 2, 3};
  b.offsets = {0, 4};
  Tensor t_emb = random_tensor({1, 8}, rng), c_emb = random_tensor({1, 8}, rng);
  EXPECT_TRUE(bitwise_equal(m.attention_block(0, b, t_emb, c_emb), b.tokens));
}

TEST(Denoiser, ZeroGammaModesAgreeBitwise) {
  std::mt19937_64 rng(2);
  for (TokenLayout layout : {TokenLayout::points, TokenLayout::image}) {
    Denoiser dense = perturbed(tiny(SparsityMode::dense, layout));
    Denoiser mask = perturbed(tiny(SparsityMode::mask, layout));
    Denoiser route = perturbed(tiny(SparsityMode::route, layout));
    const auto T = static_cast<std::size_t>(dense.config().tokens());
    Inputs in = random_inputs(dense.config(), 3, rng);
    std::vector<SparsityMask> keep_all(3, SparsityMask::all_kept(T));
    Tensor ref = dense.forward(in.state, in.times, in.conds);
    EXPECT_TRUE(bitwise_equal(mask.forward(in.state, in.times, in.conds), ref));
    EXPECT_TRUE(bitwise_equal(route.forward(in.state, in.times, in.conds), ref));
    EXPECT_TRUE(bitwise_equal(mask.forward(in.state, in.times, in.conds, keep_all), ref));
    EXPECT_TRUE(bitwise_equal(route.forward(in.state, in.times, in.conds, keep_all), ref));
  }
}

TEST(Denoiser, RoutedTokensBypassTheSpan) {
  Denoiser m = perturbed(tiny(SparsityMode::route));
  std::mt19937_64 rng(4);
  Engine mrng(4);
  Inputs in = random_inputs(m.config(), 3, rng);
  auto masks = random_masks(3, 4, 0.5, mrng);
  ActivationTrace trace;
  m.forward(in.state, in.times, in.conds, masks, &trace);
  ASSERT_EQ(trace.dropped_rows.size(), 6u);
  const std::size_t d = 8;
  for (std::size_t r : trace.dropped_rows) {
    for (std::size_t c = 0; c < d; ++c) EXPECT_EQ(trace.route_exit.at(r, c), trace.route_entry.at(r, c));
  }
  // Kept rows are transformed by the span.
  bool changed = false;
  for (std::size_t r = 0; r < 12; ++r) {
    if (std::find(trace.dropped_rows.begin(), trace.dropped_rows.end(), r) != trace.dropped_rows.end()) continue;
    changed = changed || trace.route_exit.at(r, 0) != trace.route_entry.at(r, 0);
  }
  EXPECT_TRUE(changed);
  // Inside the span only kept tokens are present.
  EXPECT_EQ(trace.layer_inputs[1].rows(), 6u);
}

TEST(Denoiser, MaskedPatchesIgnoreTheirInput) {
  Denoiser m = perturbed(tiny(SparsityMode::mask, TokenLayout::image));
  std::mt19937_64 rng(5);
  Inputs in = random_inputs(m.config(), 2, rng);
  SparsityMask mask{{1, 0, 1, 0}, 0.5};
  std::vector<SparsityMask> masks(2, mask);
  Tensor base = m.forward(in.state, in.times, in.conds, masks);
  // Overwrite the pixels of token 1 of sample 0 and token 3 of sample 1.
  std::vector<double> v(in.state.data().begin(), in.state.data().end());
  for (std::size_t c = 0; c < 4; ++c) {
    v[1 * 4 + c] += 10.0;
    v[(4 + 3) * 4 + c] -= 7.0;
  }
  Tensor changed = m.forward(Tensor::from(in.state.shape(), v), in.times, in.conds, masks);
  EXPECT_TRUE(bitwise_equal(base, changed));
  // Kept patches do matter.
  v[0] += 1.0;
  EXPECT_FALSE(bitwise_equal(base, m.forward(Tensor::from(in.state.shape(), v), in.times, in.conds, masks)));
}

TEST(Denoiser, MaskedRowsEnterAsMaskEmbedding) {
  Denoiser m = perturbed(tiny(SparsityMode::mask));
  std::mt19937_64 rng(6);
  Inputs in = random_inputs(m.config(), 1, rng);
  std::vector<SparsityMask> masks{{{0, 1, 1, 0}, 0.5}};
  ActivationTrace trace;
  m.forward(in.state, in.times, in.conds, masks, &trace);
  const Tensor& e = m.parameters().get("embed.mask");
  for (std::size_t r : {0u, 3u}) {
    for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(trace.layer_inputs[0].at(r, c), e.data()[c]);
  }
}

TEST(Denoiser, OutputShapeIndependentOfMask) {
  std::mt19937_64 rng(7);
  Engine mrng(7);
  for (SparsityMode mode : {SparsityMode::mask, SparsityMode::route}) {
    for (TokenLayout layout : {TokenLayout::points, TokenLayout::image}) {
      Denoiser m = perturbed(tiny(mode, layout));
      Inputs in = random_inputs(m.config(), 3, rng);
      for (double gamma : {0.25, 0.5, 0.75}) {
        auto masks = random_masks(3, static_cast<std::size_t>(m.config().tokens()), gamma, mrng);
        EXPECT_EQ(m.forward(in.state, in.times, in.conds, masks).shape(), in.state.shape());
      }
    }
  }
}

TEST(Denoiser, DegenerateAndMismatchedMasks) {
  Denoiser m = perturbed(tiny(SparsityMode::route));
  std::mt19937_64 rng(8);
  Inputs in = random_inputs(m.config(), 1, rng);
  std::vector<SparsityMask> none{{{0, 0, 0, 0}, 0.9}};
  EXPECT_THROW(m.forward(in.state, in.times, in.conds, none), DegenerateMaskError);
  std::vector<SparsityMask> short_mask{{{1, 0}, 0.5}};
  EXPECT_THROW(m.forward(in.state, in.times, in.conds, short_mask), DimensionError);
  const double bad_t[] = {1.5};
  EXPECT_THROW(m.forward(in.state, bad_t, in.conds), DomainError);

  // A masking model keeps going with all but one token hidden.
  Denoiser mm = perturbed(tiny(SparsityMode::mask));
  std::vector<SparsityMask> one{{{0, 0, 1, 0}, 0.75}};
  Tensor y = mm.forward(in.state, in.times, in.conds, one);
  for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Denoiser, DenseModelWarnsOnMask) {
  sgtest::WarningCapture warnings;
  Denoiser m = perturbed(tiny(SparsityMode::dense));
  std::mt19937_64 rng(9);
  Inputs in = random_inputs(m.config(), 1, rng);
  std::vector<SparsityMask> half{{{1, 0, 1, 0}, 0.5}};
  Tensor a = m.forward(in.state, in.times, in.conds, half);
  EXPECT_EQ(warnings.messages.size(), 1u);
  EXPECT_TRUE(bitwise_equal(a, m.forward(in.state, in.times, in.conds)));
}

TEST(Denoiser, SingleTokenRoute) {
  DenoiserConfig c = tiny(SparsityMode::route);
  c.num_tokens = 1;
  Denoiser m = perturbed(c);
  std::mt19937_64 rng(10);
  Inputs in = random_inputs(c, 2, rng);
  std::vector<SparsityMask> keep(2, SparsityMask::all_kept(1));
  EXPECT_EQ(m.forward(in.state, in.times, in.conds, keep).shape(), in.state.shape());
}

TEST(Denoiser, BlockEquivariantUnderPermutation) {
  Denoiser m = perturbed(tiny(SparsityMode::dense));
  std::mt19937_64 rng(11);
  TokenBatch b;
  b.tokens = random_tensor({4, 8}, rng);
  b.positions = {0, 1, 2, 3};
  b.offsets = {0, 4};
  Tensor t_emb = random_tensor({1, 8}, rng), c_emb = random_tensor({1, 8}, rng);
  Tensor y = m.attention_block(2, b, t_emb, c_emb);

  const std::size_t perm[] = {2, 0, 3, 1};
  TokenBatch p;
  p.tokens = gather_rows(b.tokens, perm);
  for (std::size_t i : perm) p.positions.push_back(b.positions[i]);
  p.offsets = b.offsets;
  Tensor yp = m.attention_block(2, p, t_emb, c_emb);
  Tensor expected = gather_rows(y, perm);
  for (std::size_t i = 0; i < yp.numel(); ++i) EXPECT_NEAR(yp.data()[i], expected.data()[i], 1e-13);
}

TEST(Denoiser, ConditionEmbedding) {
  Denoiser m = perturbed(tiny(SparsityMode::dense));
  const Condition conds[] = {Condition::of(1), Condition::of(1), Condition::null(), Condition::of(0)};
  Tensor e = m.embed_condition(conds);
  auto row = [&](std::size_t r) { return std::vector<double>(e.data().begin() + r * 8, e.data().begin() + (r + 1) * 8); };
  EXPECT_EQ(row(0), row(1));
  EXPECT_NE(row(0), row(2));
  EXPECT_NE(row(3), row(2));
  const Condition bad[] = {Condition::of(3)};
  EXPECT_THROW(m.embed_condition(bad), DomainError);

  DenoiserConfig one = tiny(SparsityMode::dense);
  one.num_classes = 1;
  Denoiser m1 = perturbed(one);
  const Condition pair[] = {Condition::of(0), Condition::null()};
  Tensor e1 = m1.embed_condition(pair);
  EXPECT_NE(e1.at(0, 0), e1.at(1, 0));
}

TEST(Denoiser, GradientsReachMaskEmbeddingAndSpan) {
  Denoiser m = perturbed(tiny(SparsityMode::mask));
  std::mt19937_64 rng(12);
  Inputs in = random_inputs(m.config(), 2, rng);
  std::vector<SparsityMask> masks(2, SparsityMask{{1, 0, 0, 1}, 0.5});
  sum(m.forward(in.state, in.times, in.conds, masks)).backward();
  auto nonzero = [](const std::vector<double>& g) {
    return std::any_of(g.begin(), g.end(), [](double v) { return v != 0.0; });
  };
  EXPECT_TRUE(nonzero(m.parameters().get("embed.mask").grad()));
  for (auto& [name, t] : m.parameters()) EXPECT_TRUE(nonzero(t.grad())) << name;

  // Without masked tokens e_mask receives nothing.
  m.parameters().zero_grad();
  sum(m.forward(in.state, in.times, in.conds)).backward();
  EXPECT_FALSE(nonzero(m.parameters().get("embed.mask").grad()));
}

TEST(Denoiser, FullModelGradientCheck) {
  for (SparsityMode mode : {SparsityMode::mask, SparsityMode::route}) {
    DenoiserConfig c = tiny(mode);
    c.num_tokens = 2;
    c.num_layers = 3;
    Denoiser m = perturbed(c, 21);
    std::mt19937_64 rng(13);
    Inputs in = random_inputs(c, 2, rng);
    std::vector<SparsityMask> masks{{{1, 0}, 0.5}, {{0, 1}, 0.5}};
    Tensor target = random_tensor(in.state.shape(), rng);
    std::vector<Tensor> leaves;
    for (auto& [name, t] : m.parameters()) leaves.push_back(t);
    auto f = [&] { return flow::fm_loss(m.forward(in.state, in.times, in.conds, masks), target); };
    auto res = grad_check(f, leaves);
    EXPECT_LT(res.max_relative_error, 1e-3) << to_string(mode);
  }
}
