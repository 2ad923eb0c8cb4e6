#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mvp/trainer/stage.hpp"

namespace mvp {

/// Dense counterpart of an MoE perceiver config with the same activated
/// FFN width per token: one expert of hidden width K·f.
PerceiverConfig vanilla_counterpart(const PerceiverConfig& moe);

/// Parameters touched by one token's forward pass (router plus K experts
/// for MoE, the single FFN for dense), including queries and W_k/W_v.
std::size_t activated_parameter_count(const PerceiverConfig& config);

struct AblationRow {
  std::string variant;  // "moe" or "vanilla"
  std::uint64_t seed = 0;
  double initial_loss = 0.0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  std::size_t activated_params = 0;
  std::size_t total_params = 0;
  std::vector<LogRecord> log;
  std::vector<NamedTensor> parameters;  // trained model, checkpoint order
};

struct AblationResult {
  std::vector<AblationRow> rows;
  double moe_mean_val = 0.0;
  double vanilla_mean_val = 0.0;
  double moe_mean_train = 0.0;  // trailing-window stage-1 train loss
  double vanilla_mean_train = 0.0;

  bool moe_not_worse() const { return moe_mean_val <= vanilla_mean_val; }
  bool moe_train_lower() const { return moe_mean_train < vanilla_mean_train; }
};

/// Stage-1 training of the MoE perceiver and its vanilla counterpart on the
/// same task, once per seed. `model.perceiver` must be an MoE config.
AblationResult run_ablation(const ModelConfig& model, const SyntheticTaskConfig& task, const StagePlan& plan,
                            const std::vector<std::uint64_t>& seeds);

}  // namespace mvp
