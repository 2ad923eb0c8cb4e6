#include "mvp/trainer/ablation.hpp"

#include "mvp/errors.hpp"

namespace mvp {

PerceiverConfig vanilla_counterpart(const PerceiverConfig& moe) {
  PerceiverConfig dense = moe;
  dense.ffn = FfnKind::dense;
  dense.ffn_hidden = moe.top_k * moe.hidden();
  dense.n_experts = 1;
  dense.top_k = 1;
  return dense;
}

std::size_t activated_parameter_count(const PerceiverConfig& c) {
  const auto d = c.d, f = c.hidden();
  const bool moe = c.ffn == FfnKind::moe;
  const auto router = moe ? d * c.n_experts : 0;
  const auto active_experts = moe ? c.top_k : 1;
  return c.output_tokens() * d + c.n_layers * (2 * d * d + router + active_experts * (2 * d * f + f + d));
}

AblationResult run_ablation(const ModelConfig& model, const SyntheticTaskConfig& task_config, const StagePlan& plan,
                            const std::vector<std::uint64_t>& seeds) {
  if (model.perceiver.ffn != FfnKind::moe) throw ConfigError("ablation: base config must be an MoE perceiver");
  if (seeds.empty()) throw ConfigError("ablation: no seeds");
  StagePlan stage1 = plan;
  stage1.stage = 1;

  const SyntheticTask task(task_config);
  AblationResult result;
  double moe_total = 0.0, vanilla_total = 0.0, moe_train = 0.0, vanilla_train = 0.0;
  for (const auto seed : seeds) {
    for (const bool is_moe : {true, false}) {
      ModelConfig cfg = model;
      if (!is_moe) cfg.perceiver = vanilla_counterpart(model.perceiver);
      auto m = BridgeModel::init(cfg, seed);
      const auto run = run_stage(stage1, m, task, seed);
      AblationRow row;
      row.variant = is_moe ? "moe" : "vanilla";
      row.seed = seed;
      row.initial_loss = run.log.empty() ? 0.0 : run.log.front().loss;
      row.final_train_loss = smoothed_loss(run.log, 10);
      row.final_val_loss = run.final_val_loss;
      row.activated_params = activated_parameter_count(cfg.perceiver);
      row.total_params = perceiver_parameter_count(cfg.perceiver);
      row.log = run.log;
      row.parameters = m.named_parameters();
      (is_moe ? moe_total : vanilla_total) += row.final_val_loss;
      (is_moe ? moe_train : vanilla_train) += row.final_train_loss;
      result.rows.push_back(std::move(row));
    }
  }
  result.moe_mean_val = moe_total / static_cast<double>(seeds.size());
  result.vanilla_mean_val = vanilla_total / static_cast<double>(seeds.size());
  result.moe_mean_train = moe_train / static_cast<double>(seeds.size());
  result.vanilla_mean_train = vanilla_train / static_cast<double>(seeds.size());
  return result;
}

}  // namespace mvp
