#pragma once

// Finite-difference verification of the perceiver's analytic gradients.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvp/perceiver/perceiver.hpp"
#include "mvp/tensor/gradcheck.hpp"

namespace mvp {

struct GradcheckConfig {
  PerceiverConfig perceiver = toy();
  std::size_t tokens_per_level = 5;
  std::size_t samples = 10;
  double tolerance = 1e-4;
  /// Fourth-order stencil: at this step its truncation and rounding errors
  /// both sit far below the tolerance even for gradients near the floor.
  double step = 1e-4;
  FdStencil stencil = FdStencil::central4;
  /// Samples whose smallest routing margin is below this are redrawn, so a
  /// finite-difference probe never flips an expert selection.
  double min_margin = 1e-3;
  std::size_t max_attempts = 500;
  /// Weights and queries are drawn wider than the training init so the
  /// router and attention softmaxes are far from uniform.
  double param_std = 0.3;
  std::uint64_t seed = 0;
  bool dense_equivalence = true;

  /// d=8, three levels of 2 queries, 2 layers, 4 experts, K=2.
  static PerceiverConfig toy();
};

struct GradGroupResult {
  std::string name;
  std::size_t size = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::size_t worst_sample = 0;
  bool pass = false;
};

struct DenseEquivalence {
  bool bit_identical = false;
  double max_abs_diff = 0.0;
};

struct GradcheckReport {
  double tolerance = 0.0;
  std::size_t samples = 0;
  std::size_t rejected = 0;  // draws discarded for small routing margin
  double smallest_margin = 0.0;
  std::vector<GradGroupResult> groups;  // one per named parameter
  std::optional<DenseEquivalence> dense;

  bool pass() const;
  /// Names of failing groups plus "dense_equivalence" when that check failed.
  std::vector<std::string> failures() const;
  nlohmann::json to_json() const;
};

/// Draws `samples` random (features, parameters, loss weights) triples with
/// routing margin at least `min_margin`, and compares backward() against
/// central differences of L = Σ O ⊙ R for every parameter tensor.
/// Throws StateError if not enough samples clear the margin.
GradcheckReport run_gradcheck(const GradcheckConfig& config);

/// N_e=1, K=1 MoE forward against the dense perceiver with the same weights.
DenseEquivalence check_dense_equivalence(const PerceiverConfig& base, std::size_t tokens_per_level, std::uint64_t seed);

}  // namespace mvp
