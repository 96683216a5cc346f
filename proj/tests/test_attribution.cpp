#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "matex/attribution.hpp"
#include "matex/error.hpp"
#include "matex/eval.hpp"
#include "matex/mock.hpp"
#include "oracles/reference.hpp"
#include "test_util.hpp"

using namespace matex;
using testutil::max_abs_diff;

namespace {

// Bundle with the given [L][N] attention on a 1 x N grid and zero gradients.
IntermediatesBundle attention_bundle(const std::vector<std::vector<float>>& rows) {
  IntermediatesBundle b;
  b.n_layers = rows.size();
  b.grid = {1, rows[0].size()};
  b.channel_dim = 1;
  b.key_dim = 1;
  b.n_heads = 1;
  std::vector<float> flat;
  for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  b.attn_cls = Tensor({rows.size(), rows[0].size()}, flat);
  b.patch_embed = Tensor({rows[0].size(), 1}, 1.0f);
  b.grad_patch_embed = Tensor({rows[0].size(), 1}, 0.0f);
  b.attn_normalized = false;
  return b;
}

AttributionMap as_map(Grid g, MapKind k = MapKind::Grad) { return {std::move(g), k, Resolution::Patch}; }

FusionWeights free_weights(double a, double b, double g, double d) {
  FusionWeights w;
  w.alpha = a, w.beta = b, w.gamma = g, w.delta = d;
  w.free_weights = true;
  return w;
}

}  // namespace

// ---- layer weights ----

TEST(LayerWeights, UniformAtZeroTemperature) {
  for (double v : layer_weights(3, 0.0)) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(LayerWeights, ClosedFormLn2) {
  const auto w = layer_weights(2, std::log(2.0));
  EXPECT_NEAR(w[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[1], 2.0 / 3.0, 1e-15);
}

TEST(LayerWeights, TwelveLayersFrozen) {
  const double want[12] = {0.0016120150476057803, 0.0026577634976763295, 0.0043819112111093345,
                           0.0072245502200753205, 0.011911269619079472,  0.01963836358202054,
                           0.03237818775942002,   0.05338260686567831,   0.08801303942486653,
                           0.14510897019874644,   0.23924424573606423,   0.39444707683765756};
  const auto w = layer_weights(12, 0.5);
  for (int l = 0; l < 12; ++l) EXPECT_NEAR(w[l], want[l], 1e-15);
  for (int l = 1; l < 12; ++l) EXPECT_GT(w[l], w[l - 1]);
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
}

TEST(LayerWeights, ZeroLayersRejected) { EXPECT_THROW(layer_weights(0, 0.5), Error); }

TEST(LayerWeights, LargeTemperatureDoesNotOverflow) {
  const auto w = layer_weights(64, 40.0);
  for (double v : w) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(w.back(), 1.0, 1e-12);
  const auto n = layer_weights(64, -40.0);
  EXPECT_NEAR(n.front(), 1.0, 1e-12);
}

TEST(LayerWeightsProperties, SumAndMonotonicity) {
  for (std::size_t L = 1; L <= 64; ++L)
    for (double tau = -2.0; tau <= 2.0001; tau += 0.25) {
      const auto w = layer_weights(L, tau);
      EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
      const auto r = ref::layer_weights(L, tau);
      EXPECT_LT(max_abs_diff(w, r), 1e-12);
      for (std::size_t l = 1; l < L; ++l) {
        if (tau > 1e-9) EXPECT_GT(w[l], w[l - 1]);
        if (tau < -1e-9) EXPECT_LT(w[l], w[l - 1]);
      }
    }
}

// ---- minmax ----

TEST(Minmax, Examples) {
  EXPECT_EQ(minmax_normalize(std::vector<double>{1, 3}), (std::vector<double>{0, 1}));
  EXPECT_EQ(minmax_normalize(std::vector<double>{5, 5, 5}), (std::vector<double>{0, 0, 0}));
  const std::vector<double> unit = {0.0, 0.25, 1.0, 0.5};
  EXPECT_EQ(minmax_normalize(unit), unit);
  EXPECT_TRUE(minmax_normalize(std::vector<double>{}).empty());
}

// ---- attention flow ----

TEST(AttentionFlow, SingleLayerIsThatLayerNormalized) {
  const auto b = attention_bundle({{0.1f, 0.5f, 0.2f, 0.2f}});
  const auto f = attention_flow(b, 3.7);
  const std::vector<double> want = ref::minmax({0.1f, 0.5f, 0.2f, 0.2f});
  EXPECT_EQ(f.grid.values, want);
  EXPECT_EQ(f.kind, MapKind::Flow);
}

TEST(AttentionFlow, HighTemperatureSelectsLastLayer) {
  const auto b = attention_bundle({{0.7f, 0.1f, 0.1f, 0.1f}, {0.1f, 0.7f, 0.1f, 0.1f}, {0.1f, 0.2f, 0.3f, 0.4f}});
  const auto f = attention_flow(b, 50.0);
  EXPECT_LT(max_abs_diff(f.grid.values, ref::minmax({0.1f, 0.2f, 0.3f, 0.4f})), 1e-6);
}

TEST(AttentionFlow, TwoLayerMockAtZeroTemperatureIsMean) {
  const auto b = mock_bundle(9, 2, 3, 3, 4);
  std::vector<double> mean(9);
  for (std::size_t i = 0; i < 9; ++i)
    mean[i] = 0.5 * static_cast<double>(b.attn_cls.at(0, i)) + 0.5 * static_cast<double>(b.attn_cls.at(1, i));
  EXPECT_LT(max_abs_diff(attention_flow(b, 0.0).grid.values, ref::minmax(mean)), 1e-12);
}

TEST(AttentionFlow, MatchesDirectEvaluationOnMocks) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = mock_bundle(seed, 1 + seed % 6, 7, 7, 8);
    for (double tau : {-1.0, 0.0, 0.5, 2.0})
      EXPECT_LT(max_abs_diff(attention_flow(b, tau).grid.values, ref::attention_flow(testutil::rows_of(b.attn_cls), tau)),
                1e-9);
  }
}

TEST(AttentionFlow, ValueWeighting) {
  auto b = mock_bundle(2, 3, 2, 2, 4);
  // Uniform value norms leave each row unchanged after renormalization.
  b.value_norms = Tensor({3, 4}, 2.0f);
  EXPECT_LT(max_abs_diff(attention_flow(b, 0.5, true).grid.values, attention_flow(b, 0.5).grid.values), 1e-6);
  // A single huge value norm steers the map to that patch.
  for (std::size_t l = 0; l < 3; ++l) b.value_norms->at(l, 2) = 1000.0f;
  const auto f = attention_flow(b, 0.5, true);
  EXPECT_EQ(f.grid.values[2], 1.0);
  b.value_norms.reset();
  try {
    attention_flow(b, 0.5, true);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ValueNormsMissing);
  }
}

TEST(AttentionFlow, WrongShapeRejected) {
  auto b = mock_bundle(2, 3, 2, 2, 4);
  b.grid.w_patches = 3;
  EXPECT_THROW(attention_flow(b, 0.5), Error);
}

// ---- consistency ----

TEST(Consistency, LayerConstantIsOne) {
  const auto c = consistency_map(attention_bundle({{0.2f, 0.8f}, {0.2f, 0.8f}, {0.2f, 0.8f}}));
  for (double v : c.grid.values) EXPECT_EQ(v, 1.0);
}

TEST(Consistency, PopulationSigma) {
  const auto c = consistency_map(attention_bundle({{0.2f, 0.5f}, {0.4f, 0.5f}}));
  EXPECT_NEAR(c.grid.values[0], 1.0 / 1.1, 1e-7);  // f32 inputs
  EXPECT_EQ(c.grid.values[1], 1.0);
}

TEST(Consistency, SingleLayerIsOne) {
  for (double v : consistency_map(mock_bundle(3, 1, 4, 4, 4)).grid.values) EXPECT_EQ(v, 1.0);
}

TEST(ConsistencyProperties, BoundsAndEquality) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = mock_bundle(seed, 2 + seed % 5, 7, 7, 4);
    const auto c = consistency_map(b);
    const auto want = ref::consistency(testutil::rows_of(b.attn_cls));
    EXPECT_LT(max_abs_diff(c.grid.values, want), 1e-9);
    for (std::size_t i = 0; i < c.grid.size(); ++i) {
      EXPECT_GT(c.grid.values[i], 0.0);
      EXPECT_LE(c.grid.values[i], 1.0);
      bool constant = true;
      for (std::size_t l = 1; l < b.n_layers; ++l) constant = constant && b.attn_cls.at(l, i) == b.attn_cls.at(0, i);
      EXPECT_EQ(c.grid.values[i] == 1.0, constant);
    }
  }
}

// ---- gradient attribution ----

TEST(GradAttribution, ZeroGradientIsAllZeros) {
  auto b = mock_bundle(1, 2, 3, 3, 4);
  std::fill(b.grad_patch_embed.data.begin(), b.grad_patch_embed.data.end(), 0.0f);
  for (double v : gradient_attribution(b).grid.values) EXPECT_EQ(v, 0.0);
}

TEST(GradAttribution, MockRelevanceIsClampedContribution) {
  MockOptions o;
  o.seed = 4;
  const auto m = make_mock_model(o);
  const auto b = mock_bundle(o);
  std::vector<double> raw(m.patch_gain.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = std::max(0.0, m.patch_contribution(i));
  EXPECT_LT(max_abs_diff(gradient_attribution(b).grid.values, ref::minmax(raw)), 1e-12);
  EXPECT_LT(max_abs_diff(gradient_attribution(b).grid.values,
                         ref::grad_attribution(testutil::rows_of(b.grad_patch_embed), testutil::rows_of(b.patch_embed))),
            1e-9);
}

TEST(GradAttribution, SinglePositivePatchIsOneHot) {
  auto b = attention_bundle({{0.25f, 0.25f, 0.25f, 0.25f}});
  b.grad_patch_embed.data = {-1.0f, -0.5f, 2.0f, -3.0f};
  EXPECT_EQ(gradient_attribution(b).grid.values, (std::vector<double>{0, 0, 1, 0}));
}

TEST(GradAttribution, CentralDifferencesOnMock) {
  MockOptions o;
  o.seed = 11;
  o.h_patches = 2;
  o.w_patches = 2;
  o.channels = 6;
  o.with_text = true;
  const auto m = make_mock_model(o);
  const auto b = mock_bundle(o);
  const double h = 1e-3;
  for (std::size_t k = 0; k < b.patch_embed.data.size(); ++k) {
    Tensor plus = m.patch_embed, minus = m.patch_embed;
    plus.data[k] += static_cast<float>(h);
    minus.data[k] -= static_cast<float>(h);
    const double step = static_cast<double>(plus.data[k]) - static_cast<double>(minus.data[k]);
    const double fd = (m.score_at(plus) - m.score_at(minus)) / step;
    const double g = b.grad_patch_embed.data[k];
    EXPECT_LT(std::abs(fd - g), 1e-3 * std::max(std::abs(g), 1e-9)) << k;
  }
}

// ---- fusion ----

TEST(Fuse, PureGradientIsIdentity) {
  const Grid g = minmax_normalize(testutil::random_grid(4, 5, 1));
  const auto prior = build_prior({}, 2.5, 4, 5);
  const auto out = fuse(as_map(g), as_map(testutil::random_grid(4, 5, 2)), as_map(testutil::random_grid(4, 5, 3)), prior,
                        free_weights(1, 0, 0, 0));
  EXPECT_LT(max_abs_diff(out.grid.values, g.values), 1e-15);
}

TEST(Fuse, NeutralGateAndPriorGivesGradient) {
  const Grid g = minmax_normalize(testutil::random_grid(6, 6, 5));
  const Grid ones(6, 6, std::vector<double>(36, 1.0));
  FusionWeights w;
  w.beta = 0.0;
  w.free_weights = true;
  const auto out = fuse(as_map(g), as_map(testutil::random_grid(6, 6, 6)), as_map(ones), build_prior({}, 2.5, 6, 6), w);
  EXPECT_LT(max_abs_diff(out.grid.values, g.values), 1e-12);
}

TEST(Fuse, DefaultsMatchDirectEvaluationOnMocks) {
  const FusionWeights w;
  for (std::uint64_t seed = 0; seed < 11; ++seed) {
    const auto b = mock_bundle(seed, 4, 7, 7, 16);
    const auto g = gradient_attribution(b), f = attention_flow(b, w.tau), c = consistency_map(b);
    const auto p = build_prior(parse_regions(mock_reports()[seed % 11]), 2.5, 7, 7);
    const auto out = fuse(g, f, c, p, w);
    const auto want = ref::fuse(g.grid.values, f.grid.values, c.grid.values, p.grid.values, 0.5, 0.2, 0.35, 0.2);
    EXPECT_LT(max_abs_diff(out.grid.values, want), 1e-6) << seed;
  }
}

TEST(FuseProperties, ScalingInvariance) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto b = mock_bundle(seed, 4, 7, 7, 16);
    const auto g = gradient_attribution(b), f = attention_flow(b, 0.5), c = consistency_map(b);
    const auto p = build_prior(parse_regions("right apex"), 2.5, 7, 7);
    const auto base = fuse(g, f, c, p, free_weights(0.5, 0.2, 0.35, 0.2));
    for (double k : {0.1, 3.0, 250.0}) {
      const auto scaled = fuse(g, f, c, p, free_weights(0.5 * k, 0.2 * k, 0.35 * k, 0.2 * k));
      EXPECT_LT(max_abs_diff(scaled.grid.values, base.grid.values), 1e-12);
      const auto am = [](const Grid& x) { return std::max_element(x.values.begin(), x.values.end()) - x.values.begin(); };
      EXPECT_EQ(am(scaled.grid), am(base.grid));
    }
  }
}

TEST(Fuse, WeightConstraint) {
  FusionWeights w;
  EXPECT_NO_THROW(w.validate());
  w.alpha = 0.6;
  EXPECT_THROW(w.validate(), Error);
  w.free_weights = true;
  EXPECT_NO_THROW(w.validate());
  w.beta = -0.1;
  EXPECT_THROW(w.validate(), Error);
  FusionWeights n;
  n.tau = std::nan("");
  EXPECT_THROW(n.validate(), Error);
}

TEST(Fuse, ShapeMismatchRejected) {
  const auto g = as_map(testutil::random_grid(3, 3, 1));
  try {
    fuse(g, g, g, build_prior({}, 2.5, 3, 4), FusionWeights{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

// ---- token relevance ----

TEST(TokenRelevance, SingleToken) {
  auto b = attention_bundle({{1.0f}});
  b.tokens = std::vector<std::string>{"effusion"};
  b.attn_eos_text = Tensor({1, 1}, 1.0f);
  b.grad_token_embed = Tensor({1, 3}, 0.5f);
  const auto t = token_relevance(b, 0.5);
  EXPECT_EQ(t.tokens, std::vector<std::string>{"effusion"});
  EXPECT_EQ(t.scores, std::vector<double>{0.0});
}

TEST(TokenRelevance, DominantTokenScoresOne) {
  MockOptions o;
  o.seed = 3;
  o.with_text = true;
  auto b = mock_bundle(o);
  const std::size_t T = b.tokens->size(), L = b.n_layers;
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t t = 0; t < T; ++t) b.attn_eos_text->at(l, t) = t == 1 ? 0.9f : 0.1f / (T - 1);
  for (std::size_t c = 0; c < b.grad_token_embed->shape[1]; ++c) b.grad_token_embed->at(1, c) = 5.0f;
  const auto r = token_relevance(b, 0.5);
  EXPECT_EQ(r.scores[1], 1.0);
  for (std::size_t t = 0; t < T; ++t)
    if (t != 1) EXPECT_LT(r.scores[t], 1.0);
}

TEST(TokenRelevance, MissingTextTensors) {
  try {
    token_relevance(mock_bundle(1, 2, 2, 2, 2), 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TextTensorsMissing);
  }
}

TEST(TokenRelevance, ScoresInUnitInterval) {
  for (std::uint64_t seed = 0; seed < 11; ++seed) {
    MockOptions o;
    o.seed = seed;
    o.with_text = true;
    const auto r = token_relevance(mock_bundle(o), 0.5);
    ASSERT_EQ(r.scores.size(), r.tokens.size());
    for (double s : r.scores) EXPECT_TRUE(s >= 0.0 && s <= 1.0);
    EXPECT_EQ(*std::max_element(r.scores.begin(), r.scores.end()), 1.0);
  }
}

// ---- upsampling ----

TEST(Upsample, ConstantStaysConstant) {
  const Grid g(3, 3, std::vector<double>(9, 0.37));
  for (double v : upsample_bilinear(g, 17, 11).values) EXPECT_DOUBLE_EQ(v, 0.37);
  for (double v : upsample_bilinear(Grid(1, 1, {0.8}), 4, 4).values) EXPECT_EQ(v, 0.8);
}

TEST(Upsample, TwoByTwoRamp) {
  const auto out = upsample_bilinear(Grid(2, 2, {0, 1, 0, 1}), 4, 4);
  const double cols[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(out(r, c), cols[c]);
}

TEST(Upsample, MatchesDirectFormula) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto g = testutil::random_grid(2 + seed % 5, 3 + seed % 4, seed);
    const std::size_t H = g.rows * (1 + seed % 7) + seed % 3, W = g.cols * 5 + 1;
    EXPECT_LT(max_abs_diff(upsample_bilinear(g, H, W).values, ref::bilinear(g.values, g.rows, g.cols, H, W)), 1e-12);
  }
}

TEST(Upsample, ShrinkingRejected) {
  EXPECT_THROW(upsample_bilinear(Grid(4, 4), 2, 8), Error);
  EXPECT_NO_THROW(resize_bilinear(Grid(4, 4), 2, 2));
}

// ---- explain ----

TEST(Explain, PriorPullsMassIntoNamedRegion) {
  const auto b = mock_bundle(0, 4, 7, 7, 16);
  ExplainOptions with, without;
  without.lambda_s = 1.0;
  const auto a = explain(b, "right apex", with), n = explain(b, "right apex", without);
  const auto boxes = std::vector<GroundTruthBox>{box_from_region(parse_regions("right apex")[0])};
  EXPECT_GT(mass_in_box(a.fused_pixel.grid, boxes), mass_in_box(n.fused_pixel.grid, boxes));
}

TEST(Explain, EmptyReportIsNeutral) {
  const auto b = mock_bundle(2, 4, 7, 7, 16);
  const auto ex = explain(b, "", ExplainOptions{});
  EXPECT_TRUE(ex.regions.empty());
  for (double v : ex.prior.grid.values) EXPECT_EQ(v, 1.0);
  const auto direct = fuse(gradient_attribution(b), attention_flow(b, 0.5), consistency_map(b), build_prior({}, 2.5, 7, 7),
                           FusionWeights{});
  EXPECT_EQ(ex.fused_patch.grid, direct.grid);
  EXPECT_EQ(ex.fused_pixel.grid.rows, b.image.height_px);
  EXPECT_EQ(ex.fused_pixel.grid.cols, b.image.width_px);
  EXPECT_EQ(ex.fused_pixel.resolution, Resolution::Pixel);
}

TEST(Explain, SingleLayerFlowIsThatLayer) {
  const auto b = mock_bundle(5, 1, 7, 7, 16);
  const auto ex = explain(b, "left base", ExplainOptions{});
  std::vector<double> row(b.attn_cls.data.begin(), b.attn_cls.data.end());
  EXPECT_EQ(ex.flow.grid.values, ref::minmax(row));
}

TEST(Explain, TextBundleYieldsTokens) {
  MockOptions o;
  o.seed = 1;
  o.with_text = true;
  const auto ex = explain(mock_bundle(o), "", ExplainOptions{});
  ASSERT_TRUE(ex.tokens.has_value());
  EXPECT_FALSE(ex.tokens->tokens.empty());
}

TEST(Explain, InvalidBundleRejected) {
  auto b = mock_bundle(5, 2, 3, 3, 4);
  b.attn_cls.data[0] = -1.0f;
  try {
    explain(b, "", ExplainOptions{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidArgument);
  }
}
