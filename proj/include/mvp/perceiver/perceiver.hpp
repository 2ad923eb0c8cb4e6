#pragma once

// MoE vision perceiver.
//
// Each level's vision tokens X (L×d, rows are tokens) are summarized by a
// block of learnable queries through single-head cross-attention
//
//   h = softmax(Q · (X·W_kᵀ + P)ᵀ / √d) · (X·W_vᵀ + P)
//
// where P is the sinusoidal position table. There is no query or output
// projection and no residual around the attention. The level summaries are
// stacked into one token matrix and passed through an MoE feed-forward layer
//
//   O_t = h_t + Σ_j g_{j,t} · FFN_j(h_t)
//   s_t = softmax(h_t · W_router),  g_{j,t} = s_{j,t} if j ∈ topK(s_t) else 0
//
// with gates left un-renormalized. Layers after the first use the running
// token state as queries: level i's block of rows re-attends to level i's
// tokens through that layer's own W_k/W_v (shared across levels).

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "mvp/tensor/checkpoint.hpp"
#include "mvp/tensor/random.hpp"
#include "mvp/tensor/tensor.hpp"

namespace mvp {

enum class FfnKind { moe, dense };

struct PerceiverConfig {
  std::size_t d = 32;
  std::size_t levels = 3;
  std::vector<std::size_t> queries_per_level{112, 96, 64};
  std::size_t n_layers = 6;
  std::size_t n_experts = 4;
  std::size_t top_k = 2;
  std::size_t ffn_hidden = 0;  // 0 means 4·d
  bool pe_enabled = true;
  /// `dense` is the vanilla perceiver: one FFN per layer, no router.
  FfnKind ffn = FfnKind::moe;
  double init_std = 0.02;

  std::size_t hidden() const { return ffn_hidden ? ffn_hidden : 4 * d; }
  std::size_t output_tokens() const;
  std::size_t experts_per_layer() const { return ffn == FfnKind::moe ? n_experts : 1; }
  /// Throws ConfigError on any violated invariant.
  void validate() const;
};

struct MultiLevelFeatures {
  std::vector<Tensor> levels;  // low → deep, each L_i × d

  std::size_t dim() const { return levels.empty() ? 0 : levels.front().cols(); }
  void validate() const;
};

struct LayerTaps {
  std::size_t encoder_depth = 0;
  std::vector<std::size_t> indices;
};

/// {⌊N/3⌋, ⌊2N/3⌋, N−1}, duplicates removed in order. N < 3 is a ConfigError.
LayerTaps tap_layers(std::size_t encoder_depth);

/// Interleaved table: row p, column 2i is sin(p / 10000^(2i/d)), column 2i+1
/// the matching cos. d must be even.
Tensor sinusoidal_pe(std::size_t tokens, std::size_t d);

struct ExpertParams {
  Tensor w1;  // hidden × d
  Tensor b1;  // 1 × hidden
  Tensor w2;  // d × hidden
  Tensor b2;  // 1 × d
};

struct PerceiverLayerParams {
  Tensor w_k;       // d × d
  Tensor w_v;       // d × d
  Tensor w_router;  // d × N_e, undefined for the dense variant
  std::vector<ExpertParams> experts;
};

struct PerceiverParams {
  std::vector<Tensor> queries;  // per level, n_i × d
  std::vector<PerceiverLayerParams> layers;

  /// "perceiver.layer0.query{i}", "perceiver.layer{l}.w_k", ...,
  /// "perceiver.layer{l}.expert{j}.w1", in a fixed order.
  std::vector<NamedTensor> named_parameters(const std::string& prefix = "perceiver") const;
  std::size_t parameter_count() const;
};

/// Closed-form count:
///   Σ n_i·d + layers · (2d² + [moe] d·N_e + E·(2·d·f + f + d)),
/// with E experts per layer (1 for dense) and f the expert hidden width.
std::size_t perceiver_parameter_count(const PerceiverConfig& config);

/// Queries and weights ~ N(0, init_std²), biases zero.
PerceiverParams init_perceiver(const PerceiverConfig& config, Rng& rng);

/// One level of cross-attention summarization; output is n × d.
Tensor summarize_level(const Tensor& queries, const Tensor& tokens, const Tensor& w_k, const Tensor& w_v,
                       bool pe_enabled);

struct TokenRoute {
  std::vector<std::size_t> experts;  // K distinct ids, descending affinity
  std::vector<double> gates;         // affinities at those ids
  std::vector<double> affinities;    // full softmax row, N_e entries
};

struct RouterDecision {
  Tensor affinities;  // T × N_e, on the tape
  std::vector<TokenRoute> tokens;

  /// Smallest gap between the K-th and (K+1)-th affinity over all tokens;
  /// +inf when every expert is selected.
  double min_margin() const;
};

/// Softmax affinities per token and top-K selection; ties go to the lower id.
RouterDecision route_tokens(const Tensor& h, const Tensor& w_router, std::size_t top_k);

/// gelu(x·W1ᵀ + b1)·W2ᵀ + b2
Tensor expert_ffn(const Tensor& x, const ExpertParams& expert);

struct ExpertStats {
  std::size_t evaluations = 0;             // token-expert pairs evaluated
  std::vector<std::size_t> per_expert;     // utilization histogram
};

/// h + Σ_j g_j · FFN_j(h), evaluating each expert only on its routed tokens.
Tensor moe_ffn(const Tensor& h, const PerceiverLayerParams& layer, const RouterDecision& decision,
               ExpertStats* stats = nullptr);

struct ForwardTrace {
  std::vector<RouterDecision> decisions;  // one per MoE layer
  ExpertStats experts;

  double min_margin() const;
};

/// Maps the levels to a sum(queries_per_level) × d token matrix.
Tensor perceiver_forward(const MultiLevelFeatures& features, const PerceiverParams& params,
                         const PerceiverConfig& config, ForwardTrace* trace = nullptr);

/// Affine d → d_out map applied to the perceiver output.
struct OutputProjection {
  Tensor w;  // d_out × d
  Tensor b;  // 1 × d_out

  static OutputProjection init(std::size_t d, std::size_t d_out, double stddev, Rng& rng);
  Tensor operator()(const Tensor& h) const;
};

}  // namespace mvp
