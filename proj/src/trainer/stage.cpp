#include "mvp/trainer/stage.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

#include "mvp/errors.hpp"
#include "mvp/tensor/ops.hpp"

namespace mvp {

void StagePlan::validate() const {
  if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
  if (batch_size == 0) throw ConfigError("stage: batch_size must be positive");
  optimizer.validate();
  if (optimizer.warmup > steps) {
    throw ConfigError("stage " + std::to_string(stage) + ": warmup (" + std::to_string(optimizer.warmup) +
                      ") exceeds steps (" + std::to_string(steps) + ")");
  }
}

StagePlan reference_stage_plan(int stage) {
  StagePlan plan;
  plan.stage = stage;
  switch (stage) {
    case 1:
      plan.optimizer.peak_lr = 2e-4;
      plan.optimizer.weight_decay = 0.0;
      plan.optimizer.warmup = 300;
      plan.batch_size = 128;
      plan.data_source = "align";
      break;
    case 2:
      plan.optimizer.peak_lr = 1e-4;
      plan.optimizer.weight_decay = 0.01;
      plan.optimizer.warmup = 100;
      plan.batch_size = 64;
      plan.data_source = "multitask";
      break;
    case 3:
      plan.optimizer.peak_lr = 1e-4;
      plan.optimizer.weight_decay = 0.01;
      plan.optimizer.warmup = 0;
      plan.batch_size = 64;
      plan.data_source = "instruct";
      break;
    default:
      throw ConfigError("stage must be 1, 2 or 3");
  }
  return plan;
}

StagePlan toy_stage_plan(int stage) {
  StagePlan plan = reference_stage_plan(stage);
  plan.steps = 200;
  plan.batch_size = 16;
  plan.optimizer.peak_lr = stage == 1 ? 1e-2 : 5e-3;
  plan.optimizer.warmup = stage == 1 ? 20 : stage == 2 ? 10 : 0;
  return plan;
}

double smoothed_loss(const std::vector<LogRecord>& log, std::size_t window, bool from_end) {
  if (log.empty()) return 0.0;
  window = std::min(window, log.size());
  const auto begin = from_end ? log.end() - static_cast<std::ptrdiff_t>(window) : log.begin();
  double total = 0.0;
  for (auto it = begin; it != begin + static_cast<std::ptrdiff_t>(window); ++it) total += it->loss;
  return total / static_cast<double>(window);
}

double validation_loss(const BridgeModel& model, const SyntheticTask& task) {
  if (task.val_size() == 0) return 0.0;
  NoGradGuard no_grad;
  double total = 0.0;
  for (std::size_t i = 0; i < task.val_size(); ++i) {
    const auto s = task.val(i);
    total += mse(model.forward(s.features), s.target).item();
  }
  return total / static_cast<double>(task.val_size());
}

StageResult run_stage(const StagePlan& plan, BridgeModel& model, const SyntheticTask& task, std::uint64_t seed) {
  plan.validate();
  if (model.completed_stage != plan.stage - 1) {
    throw StateError("stage " + std::to_string(plan.stage) + " needs a stage-" + std::to_string(plan.stage - 1) +
                     " checkpoint, model has completed stage " + std::to_string(model.completed_stage));
  }

  const auto trainable = model.trainable_parameters(plan.stage);
  std::unordered_set<const detail::Node*> trainable_nodes;
  std::vector<Tensor> params;
  for (const auto& p : trainable) {
    trainable_nodes.insert(p.tensor.node().get());
    params.push_back(p.tensor);
  }
  std::vector<NamedTensor> frozen;
  for (const auto& p : model.named_parameters()) {
    if (!trainable_nodes.contains(p.tensor.node().get())) frozen.push_back(p);
  }
  const auto frozen_before = parameter_checksum(frozen);

  StageResult result;
  for (const auto& p : params) result.trainable_count += p.numel();

  AdamW optimizer(params);
  auto all_params = model.named_parameters();
  Rng order_rng(mix_seed(seed, 100 + static_cast<std::uint64_t>(plan.stage)));
  std::vector<std::size_t> order(task.train_size());
  std::size_t cursor = order.size();
  const double inv_batch = 1.0 / static_cast<double>(plan.batch_size);

  for (std::size_t step = 0; step < plan.steps; ++step) {
    for (auto& p : all_params) p.tensor.zero_grad();
    double batch_loss = 0.0;
    for (std::size_t b = 0; b < plan.batch_size; ++b) {
      if (cursor == order.size()) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), order_rng);
        cursor = 0;
      }
      const auto sample = task.train(order[cursor++]);
      const auto loss = mse(model.forward(sample.features), sample.target);
      batch_loss += loss.item();
      backward(scale(loss, inv_batch));
    }
    const double norm = clip_grad_norm(params, plan.optimizer.grad_clip);
    const double lr = cosine_lr(step, plan.steps, plan.optimizer.warmup, plan.optimizer.peak_lr);
    optimizer.step(plan.optimizer, lr);
    result.log.push_back({step, plan.stage, batch_loss * inv_batch, lr, norm});
  }
  for (auto& p : all_params) p.tensor.zero_grad();

  if (parameter_checksum(frozen) != frozen_before) {
    throw std::logic_error("stage " + std::to_string(plan.stage) + " modified frozen parameters");
  }
  result.final_val_loss = validation_loss(model, task);
  model.completed_stage = plan.stage;
  return result;
}

}  // namespace mvp
