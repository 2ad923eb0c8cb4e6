#include "mvp/perceiver/perceiver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mvp/errors.hpp"
#include "mvp/tensor/ops.hpp"

namespace mvp {

std::size_t PerceiverConfig::output_tokens() const {
  return std::accumulate(queries_per_level.begin(), queries_per_level.end(), std::size_t{0});
}

void PerceiverConfig::validate() const {
  if (d == 0 || levels == 0 || n_layers == 0 || n_experts == 0 || top_k == 0) {
    throw ConfigError("perceiver: d, levels, n_layers, n_experts and top_k must be positive");
  }
  if (pe_enabled && d % 2 != 0) throw ConfigError("perceiver: positional embedding needs an even d");
  if (top_k > n_experts) {
    throw ConfigError("perceiver: top_k (" + std::to_string(top_k) + ") exceeds n_experts (" +
                      std::to_string(n_experts) + ")");
  }
  if (queries_per_level.size() != levels) {
    throw ConfigError("perceiver: queries_per_level has " + std::to_string(queries_per_level.size()) +
                      " entries for " + std::to_string(levels) + " levels");
  }
  for (std::size_t i = 0; i < queries_per_level.size(); ++i) {
    if (queries_per_level[i] == 0) throw ConfigError("perceiver: query counts must be positive");
    if (i > 0 && queries_per_level[i] > queries_per_level[i - 1]) {
      throw ConfigError("perceiver: queries_per_level must be non-increasing toward deeper levels");
    }
  }
  if (!(init_std >= 0.0)) throw ConfigError("perceiver: init_std must be non-negative");
}

void MultiLevelFeatures::validate() const {
  if (levels.empty()) throw ConfigError("features: no levels");
  const auto d = dim();
  for (const auto& x : levels) {
    if (x.rank() != 2) throw DimensionError("features: level is not a matrix " + shape_str(x.shape()));
    if (x.cols() != d) {
      throw DimensionError("features: levels disagree on d " + shape_str(levels.front().shape()) + " vs " +
                           shape_str(x.shape()));
    }
  }
}

LayerTaps tap_layers(std::size_t encoder_depth) {
  if (encoder_depth < 3) throw ConfigError("tap_layers: encoder depth must be >= 3");
  LayerTaps taps{encoder_depth, {}};
  for (auto idx : {encoder_depth / 3, 2 * encoder_depth / 3, encoder_depth - 1}) {
    if (std::find(taps.indices.begin(), taps.indices.end(), idx) == taps.indices.end()) taps.indices.push_back(idx);
  }
  return taps;
}

Tensor sinusoidal_pe(std::size_t tokens, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw ConfigError("sinusoidal_pe: d must be even, got " + std::to_string(d));
  std::vector<double> table(tokens * d);
  for (std::size_t pos = 0; pos < tokens; ++pos) {
    for (std::size_t i = 0; i < d / 2; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * i) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      table[pos * d + 2 * i] = std::sin(angle);
      table[pos * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor({tokens, d}, std::move(table));
}

std::vector<NamedTensor> PerceiverParams::named_parameters(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    out.push_back({prefix + ".layer0.query" + std::to_string(i), queries[i]});
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto base = prefix + ".layer" + std::to_string(l) + ".";
    const auto& layer = layers[l];
    out.push_back({base + "w_k", layer.w_k});
    out.push_back({base + "w_v", layer.w_v});
    if (layer.w_router.defined()) out.push_back({base + "w_router", layer.w_router});
    for (std::size_t j = 0; j < layer.experts.size(); ++j) {
      const auto e = base + "expert" + std::to_string(j) + ".";
      const auto& ex = layer.experts[j];
      out.push_back({e + "w1", ex.w1});
      out.push_back({e + "b1", ex.b1});
      out.push_back({e + "w2", ex.w2});
      out.push_back({e + "b2", ex.b2});
    }
  }
  return out;
}

std::size_t PerceiverParams::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : named_parameters()) total += p.tensor.numel();
  return total;
}

std::size_t perceiver_parameter_count(const PerceiverConfig& c) {
  const auto d = c.d, f = c.hidden();
  const auto router = c.ffn == FfnKind::moe ? d * c.n_experts : 0;
  const auto per_layer = 2 * d * d + router + c.experts_per_layer() * (2 * d * f + f + d);
  return c.output_tokens() * d + c.n_layers * per_layer;
}

PerceiverParams init_perceiver(const PerceiverConfig& config, Rng& rng) {
  config.validate();
  const auto d = config.d, f = config.hidden();
  const double sd = config.init_std;
  PerceiverParams params;
  for (auto n : config.queries_per_level) params.queries.push_back(randn({n, d}, sd, rng, true));
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    PerceiverLayerParams layer;
    layer.w_k = randn({d, d}, sd, rng, true);
    layer.w_v = randn({d, d}, sd, rng, true);
    if (config.ffn == FfnKind::moe) layer.w_router = randn({d, config.n_experts}, sd, rng, true);
    for (std::size_t j = 0; j < config.experts_per_layer(); ++j) {
      ExpertParams ex;
      ex.w1 = randn({f, d}, sd, rng, true);
      ex.b1 = Tensor::zeros({1, f}, true);
      ex.w2 = randn({d, f}, sd, rng, true);
      ex.b2 = Tensor::zeros({1, d}, true);
      layer.experts.push_back(std::move(ex));
    }
    params.layers.push_back(std::move(layer));
  }
  if (params.parameter_count() != perceiver_parameter_count(config)) {
    throw std::logic_error("perceiver parameter count disagrees with the closed form");
  }
  return params;
}

Tensor summarize_level(const Tensor& queries, const Tensor& tokens, const Tensor& w_k, const Tensor& w_v,
                       bool pe_enabled) {
  const auto d = queries.cols();
  if (tokens.cols() != d || w_k.rows() != d || w_v.rows() != d) {
    throw DimensionError("summarize_level: hidden size mismatch, queries " + shape_str(queries.shape()) +
                         " vs tokens " + shape_str(tokens.shape()));
  }
  Tensor keys = matmul_nt(tokens, w_k);
  Tensor values = matmul_nt(tokens, w_v);
  if (pe_enabled) {
    const auto pe = sinusoidal_pe(tokens.rows(), d);
    keys = add(keys, pe);
    values = add(values, pe);
  }
  const auto scores = scale(matmul_nt(queries, keys), 1.0 / std::sqrt(static_cast<double>(d)));
  return matmul(softmax_lastdim(scores), values);
}

double RouterDecision::min_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& tok : tokens) {
    const auto k = tok.experts.size();
    if (k >= tok.affinities.size()) continue;
    std::vector<double> sorted = tok.affinities;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    margin = std::min(margin, sorted[k - 1] - sorted[k]);
  }
  return margin;
}

RouterDecision route_tokens(const Tensor& h, const Tensor& w_router, std::size_t top_k) {
  const auto n_experts = w_router.cols();
  if (top_k == 0 || top_k > n_experts) throw ConfigError("route_tokens: need 1 <= K <= N_e");
  RouterDecision decision;
  decision.affinities = softmax_lastdim(matmul(h, w_router));
  const auto s = decision.affinities.data();
  std::vector<std::size_t> order(n_experts);
  decision.tokens.reserve(h.rows());
  for (std::size_t t = 0; t < h.rows(); ++t) {
    const auto row = s.subspan(t * n_experts, n_experts);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    TokenRoute route;
    route.affinities.assign(row.begin(), row.end());
    for (std::size_t k = 0; k < top_k; ++k) {
      route.experts.push_back(order[k]);
      route.gates.push_back(row[order[k]]);
    }
    decision.tokens.push_back(std::move(route));
  }
  return decision;
}

Tensor expert_ffn(const Tensor& x, const ExpertParams& ex) {
  const auto hidden = gelu(add_row(matmul_nt(x, ex.w1), ex.b1));
  return add_row(matmul_nt(hidden, ex.w2), ex.b2);
}

Tensor moe_ffn(const Tensor& h, const PerceiverLayerParams& layer, const RouterDecision& decision, ExpertStats* stats) {
  if (decision.tokens.size() != h.rows()) throw ContractError("moe_ffn: decision does not match token count");
  const auto n_experts = layer.experts.size();
  if (stats && stats->per_expert.size() < n_experts) stats->per_expert.resize(n_experts, 0);

  Tensor out = h;
  std::vector<std::size_t> rows, cols;
  for (std::size_t j = 0; j < n_experts; ++j) {
    rows.clear();
    for (std::size_t t = 0; t < decision.tokens.size(); ++t) {
      const auto& sel = decision.tokens[t].experts;
      if (std::find(sel.begin(), sel.end(), j) != sel.end()) rows.push_back(t);
    }
    if (rows.empty()) continue;
    cols.assign(rows.size(), j);
    const auto y = expert_ffn(gather_rows(h, rows), layer.experts[j]);
    const auto gates = gather_elements(decision.affinities, rows, cols);
    out = index_add_rows(out, scale_rows(y, gates), rows);
    if (stats) {
      stats->evaluations += rows.size();
      stats->per_expert[j] += rows.size();
    }
  }
  return out;
}

double ForwardTrace::min_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& dec : decisions) margin = std::min(margin, dec.min_margin());
  return margin;
}

Tensor perceiver_forward(const MultiLevelFeatures& features, const PerceiverParams& params,
                         const PerceiverConfig& config, ForwardTrace* trace) {
  if (features.levels.size() != config.levels) {
    throw ConfigError("perceiver_forward: got " + std::to_string(features.levels.size()) + " levels, config expects " +
                      std::to_string(config.levels));
  }
  features.validate();
  if (features.dim() != config.d) {
    throw DimensionError("perceiver_forward: feature dim " + std::to_string(features.dim()) + " vs d=" +
                         std::to_string(config.d));
  }

  Tensor h;
  std::vector<Tensor> blocks(config.levels);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const auto& layer = params.layers[l];
    std::size_t offset = 0;
    for (std::size_t i = 0; i < config.levels; ++i) {
      const auto n = config.queries_per_level[i];
      const Tensor queries = l == 0 ? params.queries[i] : slice_rows(h, offset, n);
      blocks[i] = summarize_level(queries, features.levels[i], layer.w_k, layer.w_v, config.pe_enabled);
      offset += n;
    }
    h = concat_rows(blocks);
    if (config.ffn == FfnKind::moe) {
      auto decision = route_tokens(h, layer.w_router, config.top_k);
      h = moe_ffn(h, layer, decision, trace ? &trace->experts : nullptr);
      if (trace) trace->decisions.push_back(std::move(decision));
    } else {
      h = add(h, expert_ffn(h, layer.experts.front()));
      if (trace) {
        trace->experts.evaluations += h.rows();
        trace->experts.per_expert.resize(1, 0);
        trace->experts.per_expert[0] += h.rows();
      }
    }
  }
  return h;
}

OutputProjection OutputProjection::init(std::size_t d, std::size_t d_out, double stddev, Rng& rng) {
  return {randn({d_out, d}, stddev, rng, true), Tensor::zeros({1, d_out}, true)};
}

Tensor OutputProjection::operator()(const Tensor& h) const { return add_row(matmul_nt(h, w), b); }

}  // namespace mvp
