#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "mvp/errors.hpp"
#include "mvp/perceiver/perceiver.hpp"
#include "mvp/perceiver/verify.hpp"
#include "mvp/tensor/gradcheck.hpp"
#include "mvp/tensor/ops.hpp"
#include "oracle.hpp"

using namespace mvp;

namespace {

PerceiverConfig small_config(std::vector<std::size_t> queries, std::size_t d = 8, std::size_t layers = 2) {
  PerceiverConfig c;
  c.d = d;
  c.levels = queries.size();
  c.queries_per_level = std::move(queries);
  c.n_layers = layers;
  c.n_experts = 4;
  c.top_k = 2;
  return c;
}

MultiLevelFeatures random_features(const PerceiverConfig& c, std::vector<std::size_t> tokens, Rng& rng) {
  MultiLevelFeatures f;
  for (auto l : tokens) f.levels.push_back(randn({l, c.d}, 1.0, rng));
  return f;
}

void redraw(PerceiverParams& p, double stddev, Rng& rng) {
  for (auto& np : p.named_parameters()) {
    auto data = np.tensor.mutable_data();
    const auto fresh = randn(np.tensor.shape(), stddev, rng);
    std::copy(fresh.data().begin(), fresh.data().end(), data.begin());
  }
}

void zero(Tensor t) {
  auto d = t.mutable_data();
  std::fill(d.begin(), d.end(), 0.0);
}

}  // namespace

TEST(Config, DefaultsMatchPublishedAllocation) {
  const PerceiverConfig c;
  EXPECT_EQ(c.queries_per_level, (std::vector<std::size_t>{112, 96, 64}));
  EXPECT_EQ(c.output_tokens(), 272u);
  EXPECT_EQ(c.n_layers, 6u);
  EXPECT_EQ(c.n_experts, 4u);
  EXPECT_EQ(c.top_k, 2u);
  EXPECT_EQ(c.hidden(), 4 * c.d);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, InvariantsAreEnforced) {
  auto c = small_config({2, 2, 2});
  c.top_k = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config({2, 3, 1});
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config({2, 0, 0});
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config({2, 2});
  c.levels = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TapLayers, FormulaAndDedup) {
  EXPECT_EQ(tap_layers(24).indices, (std::vector<std::size_t>{8, 16, 23}));
  EXPECT_EQ(tap_layers(27).indices, (std::vector<std::size_t>{9, 18, 26}));
  EXPECT_EQ(tap_layers(3).indices, (std::vector<std::size_t>{1, 2}));
  EXPECT_THROW(tap_layers(2), ConfigError);
}

TEST(TapLayers, StrictlyIncreasingAndInRange) {
  for (std::size_t n = 3; n < 200; ++n) {
    const auto taps = tap_layers(n).indices;
    for (std::size_t i = 0; i < taps.size(); ++i) {
      EXPECT_LT(taps[i], n);
      if (i) EXPECT_LT(taps[i - 1], taps[i]);
    }
  }
}

TEST(PositionalEmbedding, RowZeroAlternatesZeroOne) {
  const auto pe = sinusoidal_pe(3, 8);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(pe.at(0, j), j % 2 == 0 ? 0.0 : 1.0);
}

TEST(PositionalEmbedding, MatchesPerElementFormulaAndRange) {
  const auto pe = sinusoidal_pe(4, 8);
  for (std::size_t p = 0; p < 4; ++p)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(pe.at(p, j), oracle::pe(p, j, 8), 1e-15);
  for (double v : sinusoidal_pe(300, 16).data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(sinusoidal_pe(4, 7), ConfigError);
}

TEST(Summarize, SingleTokenCopiesValueRow) {
  Rng rng(1);
  const auto q = randn({3, 8}, 1.0, rng), x = randn({1, 8}, 1.0, rng);
  const auto wk = randn({8, 8}, 1.0, rng), wv = randn({8, 8}, 1.0, rng);
  const auto h = summarize_level(q, x, wk, wv, true);
  const auto v = add(matmul_nt(x, wv), sinusoidal_pe(1, 8));
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(h.at(n, j), v.at(0, j), 1e-15);
}

TEST(Summarize, ZeroProjectionsWithoutPeGiveZero) {
  Rng rng(2);
  const auto h = summarize_level(randn({3, 8}, 1.0, rng), randn({5, 8}, 1.0, rng), Tensor::zeros({8, 8}),
                                 Tensor::zeros({8, 8}), false);
  for (double v : h.data()) EXPECT_EQ(v, 0.0);
}

TEST(Summarize, InvariantToAllTokenPermutationsWithoutPe) {
  Rng rng(3);
  const auto q = randn({2, 8}, 1.0, rng), x = randn({3, 8}, 1.0, rng);
  const auto wk = randn({8, 8}, 0.5, rng), wv = randn({8, 8}, 0.5, rng);
  const auto base = summarize_level(q, x, wk, wv, false);
  std::vector<std::size_t> perm{0, 1, 2};
  int count = 0;
  do {
    const auto h = summarize_level(q, gather_rows(x, perm), wk, wv, false);
    EXPECT_LT(oracle::max_abs_diff(h.data(), base.data()), 1e-10);
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  EXPECT_EQ(count, 6);
}

TEST(Summarize, DimensionMismatchThrows) {
  EXPECT_THROW(summarize_level(Tensor::zeros({2, 8}), Tensor::zeros({3, 6}), Tensor::zeros({8, 8}),
                               Tensor::zeros({8, 8}), false),
               DimensionError);
}

TEST(Routing, UniformAffinitiesPickLowestIndices) {
  Rng rng(4);
  const auto d = route_tokens(randn({5, 8}, 1.0, rng), Tensor::zeros({8, 4}), 2);
  for (const auto& tok : d.tokens) {
    EXPECT_EQ(tok.experts, (std::vector<std::size_t>{0, 1}));
    EXPECT_EQ(tok.gates, (std::vector<double>{0.25, 0.25}));
  }
}

TEST(Routing, SingleExpertGateIsOne) {
  Rng rng(5);
  const auto d = route_tokens(randn({6, 8}, 1.0, rng), randn({8, 1}, 1.0, rng), 1);
  for (const auto& tok : d.tokens) EXPECT_EQ(tok.gates, (std::vector<double>{1.0}));
}

TEST(Routing, MatchesBruteForceSortAndGateContract) {
  Rng rng(6);
  const auto h = randn({500, 8}, 1.0, rng), w = randn({8, 4}, 1.0, rng);
  const auto d = route_tokens(h, w, 2);
  const auto logits = oracle::matmul(oracle::from(h), oracle::from(w));
  for (std::size_t t = 0; t < 500; ++t) {
    const auto s = oracle::softmax(std::vector<double>(logits.v.begin() + 4 * t, logits.v.begin() + 4 * t + 4));
    const auto expect = oracle::top_k(s, 2);
    const auto& tok = d.tokens[t];
    EXPECT_EQ(tok.experts, expect);
    double total = 0.0, sum_s = 0.0;
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_NEAR(tok.gates[k], s[expect[k]], 1e-12);
      EXPECT_EQ(tok.gates[k], tok.affinities[tok.experts[k]]);
      total += tok.gates[k];
    }
    for (double v : tok.affinities) sum_s += v;
    EXPECT_NEAR(sum_s, 1.0, 1e-12);
    EXPECT_GT(total, 0.0);
    EXPECT_LE(total, 1.0);
  }
}

TEST(MoeFfn, ZeroOutputWeightsGiveIdentity) {
  Rng rng(7);
  const auto c = small_config({2, 2, 2});
  auto p = init_perceiver(c, rng);
  auto& layer = p.layers[0];
  for (auto& e : layer.experts) {
    zero(e.w2);
    zero(e.b2);
  }
  const auto h = randn({6, 8}, 1.0, rng);
  const auto out = moe_ffn(h, layer, route_tokens(h, layer.w_router, 2));
  EXPECT_EQ(0, std::memcmp(out.data().data(), h.data().data(), h.numel() * sizeof(double)));
}

TEST(MoeFfn, SingleExpertEqualsDenseResidualBitForBit) {
  Rng rng(8);
  auto c = small_config({2, 2, 2});
  c.n_experts = 1;
  c.top_k = 1;
  auto p = init_perceiver(c, rng);
  redraw(p, 0.3, rng);
  const auto& layer = p.layers[0];
  const auto h = randn({6, 8}, 1.0, rng);
  const auto out = moe_ffn(h, layer, route_tokens(h, layer.w_router, 1));
  const auto dense = add(h, expert_ffn(h, layer.experts[0]));
  EXPECT_EQ(0, std::memcmp(out.data().data(), dense.data().data(), h.numel() * sizeof(double)));
}

TEST(MoeFfn, MatchesOracleAndCountsOnlySelectedExperts) {
  Rng rng(9);
  const auto c = small_config({2, 2, 2});
  auto p = init_perceiver(c, rng);
  redraw(p, 0.3, rng);
  const auto h = randn({11, 8}, 1.0, rng);
  ExpertStats stats;
  const auto out = moe_ffn(h, p.layers[1], route_tokens(h, p.layers[1].w_router, 2), &stats);
  const auto ref = oracle::moe(oracle::from(h), p.layers[1], 2);
  EXPECT_LT(oracle::max_abs_diff(out.data(), ref.v), 1e-12);
  EXPECT_EQ(stats.evaluations, 11u * 2);
  EXPECT_EQ(std::accumulate(stats.per_expert.begin(), stats.per_expert.end(), std::size_t{0}), 22u);
}

TEST(MoeFfn, GradientMatchesFiniteDifferencesAwayFromRoutingBoundaries) {
  const auto c = small_config({2, 2, 2});
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; checked < 5 && seed < 100; ++seed) {
    Rng rng(1000 + seed);
    auto p = init_perceiver(c, rng);
    redraw(p, 0.3, rng);
    auto h = randn({6, 8}, 1.0, rng, true);
    const auto target = randn({6, 8}, 1.0, rng);
    const auto& layer = p.layers[0];
    if (route_tokens(h, layer.w_router, 2).min_margin() < 1e-3) continue;
    ++checked;
    const auto loss = [&]() { return mse(moe_ffn(h, layer, route_tokens(h, layer.w_router, 2)), target); };
    std::vector<Tensor> wrt{h, layer.w_router};
    for (const auto& e : layer.experts) wrt.insert(wrt.end(), {e.w1, e.b1, e.w2, e.b2});
    for (auto& t : wrt) t.zero_grad();
    backward(loss());
    for (auto& t : wrt) {
      const std::vector<double> analytic(t.grad().begin(), t.grad().end());
      const auto numeric = finite_diff_grad(
          [&](const Tensor&) {
            NoGradGuard g;
            return loss().item();
          },
          t, 1e-5);
      EXPECT_LT(compare_gradients(analytic, numeric.data()).max_rel_error, 1e-4);
    }
  }
  EXPECT_EQ(checked, 5u);
}

TEST(Forward, OutputTokenCountIsIndependentOfInputLength) {
  Rng rng(10);
  auto c = small_config({112, 96, 64}, 8, 1);
  const auto p = init_perceiver(c, rng);
  for (std::size_t L : {1, 16, 64, 1024, 2048}) {
    const auto f = random_features(c, {L, L, L}, rng);
    const auto out = perceiver_forward(f, p, c);
    EXPECT_EQ(out.shape(), (Shape{272, 8}));
  }
  const auto mixed = random_features(c, {3, 40, 7}, rng);
  EXPECT_EQ(perceiver_forward(mixed, p, c).rows(), 272u);
}

TEST(Forward, StraightLineOracleAgreesOnTwoOneOneConfig) {
  Rng rng(11);
  auto c = small_config({2, 1, 1}, 8, 2);
  auto p = init_perceiver(c, rng);
  redraw(p, 0.5, rng);
  const auto f = random_features(c, {4, 4, 4}, rng);
  const auto out = perceiver_forward(f, p, c);
  const auto ref = oracle::perceiver(f, p, c);
  EXPECT_LT(oracle::max_abs_diff(out.data(), ref.v), 1e-12);
}

TEST(Forward, DefaultDepthMatchesOracle) {
  Rng rng(12);
  auto c = small_config({4, 3, 2}, 8, 6);
  auto p = init_perceiver(c, rng);
  redraw(p, 0.3, rng);
  const auto f = random_features(c, {5, 7, 9}, rng);
  EXPECT_LT(oracle::max_abs_diff(perceiver_forward(f, p, c).data(), oracle::perceiver(f, p, c).v), 1e-12);
}

// Without a residual around the attention, zero projections make every
// attention output zero, the experts then see zeros and add nothing.
TEST(Forward, ZeroWeightsGiveZeroOutput) {
  Rng rng(13);
  auto c = small_config({2, 2, 2});
  c.pe_enabled = false;
  auto p = init_perceiver(c, rng);
  for (auto& np : p.named_parameters()) {
    if (np.name.find("query") == std::string::npos) zero(np.tensor);
  }
  const auto out = perceiver_forward(random_features(c, {5, 5, 5}, rng), p, c);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, PermutationInvariantWithoutPe) {
  Rng rng(14);
  auto c = small_config({2, 2, 2});
  c.pe_enabled = false;
  auto p = init_perceiver(c, rng);
  redraw(p, 0.3, rng);
  auto f = random_features(c, {5, 4, 6}, rng);
  const auto base = perceiver_forward(f, p, c);
  for (int trial = 0; trial < 10; ++trial) {
    MultiLevelFeatures g;
    for (const auto& x : f.levels) {
      std::vector<std::size_t> perm(x.rows());
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      g.levels.push_back(gather_rows(x, perm));
    }
    EXPECT_LT(oracle::max_abs_diff(perceiver_forward(g, p, c).data(), base.data()), 1e-10);
  }
}

TEST(Forward, LevelCountMismatchIsConfigError) {
  Rng rng(15);
  const auto c = small_config({2, 2, 2});
  const auto p = init_perceiver(c, rng);
  MultiLevelFeatures f;
  f.levels = {Tensor::zeros({3, 8}), Tensor::zeros({3, 8})};
  EXPECT_THROW(perceiver_forward(f, p, c), ConfigError);
}

TEST(Forward, ExpertEvaluationsEqualTokensTimesK) {
  Rng rng(16);
  auto c = small_config({5, 4, 3}, 8, 3);
  const auto p = init_perceiver(c, rng);
  ForwardTrace trace;
  perceiver_forward(random_features(c, {6, 6, 6}, rng), p, c, &trace);
  EXPECT_EQ(trace.decisions.size(), 3u);
  EXPECT_EQ(trace.experts.evaluations, 3u * 12 * 2);
  for (const auto& d : trace.decisions) {
    for (const auto& tok : d.tokens) {
      std::size_t nonzero = 0;
      for (std::size_t j = 0; j < 4; ++j) {
        const auto it = std::find(tok.experts.begin(), tok.experts.end(), j);
        nonzero += it != tok.experts.end() && tok.gates[it - tok.experts.begin()] > 0.0;
      }
      EXPECT_EQ(nonzero, 2u);
    }
  }
}

TEST(Parameters, ClosedFormCountMatchesConstruction) {
  Rng rng(17);
  for (auto ffn : {FfnKind::moe, FfnKind::dense}) {
    auto c = small_config({6, 4, 4}, 12, 3);
    c.ffn = ffn;
    c.ffn_hidden = 20;
    const auto p = init_perceiver(c, rng);
    const std::size_t d = 12, f = 20, e = ffn == FfnKind::moe ? 4 : 1, router = ffn == FfnKind::moe ? d * 4 : 0;
    EXPECT_EQ(p.parameter_count(), 14 * d + 3 * (2 * d * d + router + e * (2 * d * f + f + d)));
    EXPECT_EQ(p.parameter_count(), perceiver_parameter_count(c));
  }
}

TEST(Parameters, NamesFollowModuleLayerParamScheme) {
  Rng rng(18);
  const auto p = init_perceiver(small_config({2, 2, 2}), rng);
  const auto named = p.named_parameters();
  EXPECT_EQ(named.front().name, "perceiver.layer0.query0");
  EXPECT_EQ(named.back().name, "perceiver.layer1.expert3.b2");
  for (const auto& n : named) EXPECT_EQ(n.name.rfind("perceiver.layer", 0), 0u) << n.name;
}

TEST(Gradcheck, ToyConfigPassesEveryGroup) {
  GradcheckConfig config;
  config.samples = 3;
  const auto report = run_gradcheck(config);
  EXPECT_TRUE(report.pass()) << report.to_json().dump(2);
  EXPECT_EQ(report.groups.size(), 3u + 2 * (3 + 4 * 4));
  ASSERT_TRUE(report.dense.has_value());
  EXPECT_TRUE(report.dense->bit_identical);
  EXPECT_GE(report.smallest_margin, config.min_margin);
}

TEST(Gradcheck, CorruptedAdjointIsNamed) {
  GradcheckConfig config;
  config.samples = 1;
  config.dense_equivalence = false;
  mvp::testing::set_adjoint_fault("add_row", 1.5);
  const auto report = run_gradcheck(config);
  mvp::testing::set_adjoint_fault("");
  EXPECT_FALSE(report.pass());
  const auto failures = report.failures();
  EXPECT_NE(std::find(failures.begin(), failures.end(), "perceiver.layer0.expert0.b1"), failures.end());
}

TEST(Gradcheck, DenseEquivalenceIsBitIdentical) {
  const auto eq = check_dense_equivalence(GradcheckConfig::toy(), 5, 3);
  EXPECT_TRUE(eq.bit_identical);
  EXPECT_EQ(eq.max_abs_diff, 0.0);
}
