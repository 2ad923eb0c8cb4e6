#pragma once

// Seeded stand-in for alignment data.
//
// Each sample draws a latent Z (rank × d). Level i's tokens are
// X_i = C_i·Z + σ·E_i with fixed per-level loadings C_i and fresh
// level-specific noise E_i. The target token matrix is the fixed linear map
// Y = P·Z·M (T × d_out). A larger rank gives richer targets.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mvp/perceiver/perceiver.hpp"

namespace mvp {

struct SyntheticTaskConfig {
  std::vector<std::size_t> tokens_per_level{12, 12, 12};
  std::size_t d = 32;             // feature width, equals the perceiver d
  std::size_t output_tokens = 272;
  std::size_t d_out = 32;         // target width, equals d_llm
  std::size_t latent_rank = 2;
  double level_noise = 0.1;
  std::size_t n_train = 512;
  std::size_t n_val = 64;
  std::uint64_t seed = 17;

  void validate() const;
};

struct Sample {
  MultiLevelFeatures features;
  Tensor target;
};

class SyntheticTask {
 public:
  explicit SyntheticTask(SyntheticTaskConfig config);

  const SyntheticTaskConfig& config() const { return config_; }
  std::size_t train_size() const { return config_.n_train; }
  std::size_t val_size() const { return config_.n_val; }

  /// Deterministic in (seed, index). Train indices map to sample ids
  /// [0, n_train), validation to [n_train, n_train + n_val), so the splits
  /// never overlap.
  Sample train(std::size_t index) const;
  Sample val(std::size_t index) const;
  Sample sample(std::size_t sample_id) const;

 private:
  SyntheticTaskConfig config_;
  std::vector<std::vector<double>> loadings_;  // per level, L_i × rank
  std::vector<double> target_rows_;            // T × rank
  std::vector<double> target_map_;             // d × d_out
};

}  // namespace mvp
