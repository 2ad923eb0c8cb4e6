#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mvp/trainer/model.hpp"
#include "mvp/trainer/optim.hpp"
#include "mvp/trainer/synthetic.hpp"

namespace mvp {

struct StagePlan {
  int stage = 1;
  std::size_t steps = 200;
  std::size_t batch_size = 16;
  OptimizerConfig optimizer;
  std::string data_source = "align";

  void validate() const;
};

/// Per-stage hyperparameters at full scale: lr {2e-4, 1e-4, 1e-4},
/// weight decay {0, 0.01, 0.01}, warmup {300, 100, 0}, batch {128, 64, 64}.
StagePlan reference_stage_plan(int stage);

/// Desk-scale plan: 200 steps of 16 samples. Peak lr {1e-2, 5e-3, 5e-3},
/// warmup {20, 10, 0}; weight decay and data source as in the reference.
StagePlan toy_stage_plan(int stage);

struct LogRecord {
  std::size_t step = 0;
  int stage = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

struct StageResult {
  std::vector<LogRecord> log;
  double final_val_loss = 0.0;
  std::size_t trainable_count = 0;
};

/// Mean of `window` trailing (or leading) losses.
double smoothed_loss(const std::vector<LogRecord>& log, std::size_t window, bool from_end = true);

/// Mean per-sample MSE over the validation split, no tape.
double validation_loss(const BridgeModel& model, const SyntheticTask& task);

/// Trains the stage's parameter set for plan.steps steps. Stage k > 1 needs
/// a model whose completed_stage is k − 1 (StateError otherwise). Parameters
/// outside the trainable set are left bit-identical.
StageResult run_stage(const StagePlan& plan, BridgeModel& model, const SyntheticTask& task, std::uint64_t seed);

}  // namespace mvp
