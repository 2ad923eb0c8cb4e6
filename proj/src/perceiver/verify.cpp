#include "mvp/perceiver/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "mvp/errors.hpp"
#include "mvp/tensor/gradcheck.hpp"
#include "mvp/tensor/ops.hpp"

namespace mvp {

PerceiverConfig GradcheckConfig::toy() {
  PerceiverConfig c;
  c.d = 8;
  c.levels = 3;
  c.queries_per_level = {2, 2, 2};
  c.n_layers = 2;
  c.n_experts = 4;
  c.top_k = 2;
  return c;
}

namespace {

MultiLevelFeatures draw_features(const PerceiverConfig& c, std::size_t tokens, Rng& rng) {
  MultiLevelFeatures f;
  for (std::size_t i = 0; i < c.levels; ++i) f.levels.push_back(randn({tokens, c.d}, 1.0, rng));
  return f;
}

void redraw(PerceiverParams& params, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& np : params.named_parameters()) {
    for (auto& v : np.tensor.mutable_data()) v = dist(rng);
  }
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckConfig& config) {
  config.perceiver.validate();
  if (config.samples == 0) throw ConfigError("gradcheck: samples must be positive");

  GradcheckReport report;
  report.tolerance = config.tolerance;
  report.smallest_margin = std::numeric_limits<double>::infinity();
  std::size_t attempt = 0;
  while (report.samples < config.samples) {
    if (attempt >= config.max_attempts) {
      throw StateError("gradcheck: only " + std::to_string(report.samples) + " of " + std::to_string(config.samples) +
                       " samples cleared the routing margin in " + std::to_string(attempt) + " draws");
    }
    Rng rng(mix_seed(config.seed, attempt++));
    auto params = init_perceiver(config.perceiver, rng);
    redraw(params, config.param_std, rng);
    const auto features = draw_features(config.perceiver, config.tokens_per_level, rng);
    const auto weights = randn({config.perceiver.output_tokens(), config.perceiver.d}, 1.0, rng);

    ForwardTrace trace;
    const auto out = perceiver_forward(features, params, config.perceiver, &trace);
    const double margin = trace.min_margin();
    if (margin < config.min_margin) {
      ++report.rejected;
      continue;
    }
    report.smallest_margin = std::min(report.smallest_margin, margin);
    backward(sum(mul(out, weights)));

    auto named = params.named_parameters();
    if (report.groups.empty()) {
      for (const auto& np : named) report.groups.push_back({np.name, np.tensor.numel()});
    }
    const auto loss = [&](const Tensor&) {
      NoGradGuard guard;
      return sum(mul(perceiver_forward(features, params, config.perceiver), weights)).item();
    };
    for (std::size_t g = 0; g < named.size(); ++g) {
      auto& theta = named[g].tensor;
      std::vector<double> analytic(theta.numel(), 0.0);
      if (theta.has_grad()) std::copy(theta.grad().begin(), theta.grad().end(), analytic.begin());
      const auto numeric = finite_diff_grad(loss, theta, config.step, config.stencil);
      const auto cmp = compare_gradients(analytic, numeric.data());
      auto& group = report.groups[g];
      if (cmp.max_rel_error > group.max_rel_error || report.samples == 0) {
        group.max_rel_error = cmp.max_rel_error;
        group.worst_index = cmp.worst_index;
        group.worst_sample = report.samples;
      }
      group.max_abs_error = std::max(group.max_abs_error, cmp.max_abs_error);
    }
    ++report.samples;
  }
  for (auto& g : report.groups) g.pass = g.max_rel_error <= config.tolerance;
  if (config.dense_equivalence) {
    report.dense = check_dense_equivalence(config.perceiver, config.tokens_per_level, config.seed);
  }
  return report;
}

DenseEquivalence check_dense_equivalence(const PerceiverConfig& base, std::size_t tokens_per_level,
                                         std::uint64_t seed) {
  PerceiverConfig moe = base;
  moe.ffn = FfnKind::moe;
  moe.n_experts = 1;
  moe.top_k = 1;
  PerceiverConfig dense = moe;
  dense.ffn = FfnKind::dense;

  Rng rng(mix_seed(seed, 0xde45e));
  auto moe_params = init_perceiver(moe, rng);
  redraw(moe_params, 0.3, rng);
  PerceiverParams dense_params = moe_params;
  for (auto& layer : dense_params.layers) layer.w_router = Tensor();
  const auto features = draw_features(moe, tokens_per_level, rng);

  NoGradGuard guard;
  const auto a = perceiver_forward(features, moe_params, moe);
  const auto b = perceiver_forward(features, dense_params, dense);
  DenseEquivalence eq;
  eq.bit_identical = a.numel() == b.numel() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
  for (std::size_t i = 0; i < a.numel(); ++i) eq.max_abs_diff = std::max(eq.max_abs_diff, std::fabs(a.data()[i] - b.data()[i]));
  return eq;
}

bool GradcheckReport::pass() const { return failures().empty(); }

std::vector<std::string> GradcheckReport::failures() const {
  std::vector<std::string> out;
  for (const auto& g : groups) {
    if (!g.pass) out.push_back(g.name);
  }
  if (dense && !dense->bit_identical) out.push_back("dense_equivalence");
  return out;
}

nlohmann::json GradcheckReport::to_json() const {
  nlohmann::json j;
  j["pass"] = pass();
  j["tolerance"] = tolerance;
  j["samples"] = samples;
  j["rejected_draws"] = rejected;
  j["smallest_margin"] = smallest_margin;
  auto gs = nlohmann::json::array();
  for (const auto& g : groups) {
    gs.push_back({{"name", g.name},
                  {"size", g.size},
                  {"max_rel_error", g.max_rel_error},
                  {"max_abs_error", g.max_abs_error},
                  {"worst_index", g.worst_index},
                  {"worst_sample", g.worst_sample},
                  {"pass", g.pass}});
  }
  j["groups"] = std::move(gs);
  if (dense) {
    j["dense_equivalence"] = {{"bit_identical", dense->bit_identical}, {"max_abs_diff", dense->max_abs_diff}};
  } else {
    j["dense_equivalence"] = nullptr;
  }
  j["failures"] = failures();
  return j;
}

}  // namespace mvp
