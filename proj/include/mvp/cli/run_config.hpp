#pragma once

// Everything a subcommand needs, serializable so that a run directory always
// holds the exact configuration that produced it.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvp/perceiver/verify.hpp"
#include "mvp/trainer/ablation.hpp"
#include "mvp/trainer/stage.hpp"

namespace mvp {

struct AblationSettings {
  ModelConfig model;
  SyntheticTaskConfig task;
  StagePlan plan;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  /// Latent rank of the richer-target variant; 0 skips it.
  std::size_t rich_latent_rank = 8;
};

struct EvalSettings {
  /// oracle | fulltext | constant:<reply> | random:<seed> | subprocess
  std::string adapter = "oracle";
  std::string adapter_cmd;
  bool one_shot = false;
  int threads = 0;
  double grounding_threshold = 0.5;
};

struct CorpusSettings {
  /// none | hash | subprocess
  std::string scorer = "none";
  std::string scorer_cmd;
  std::uint64_t scorer_seed = 0;
  std::string reference;  // optional reference metrics document to render
};

struct RunInputs {
  std::string mcq_items;
  std::string grounding_items;
  std::vector<std::string> corpora;
  std::string init;  // run directory holding the previous stage's checkpoint
};

struct RunConfig {
  std::uint64_t seed = 0;
  int stage = 1;  // stage trained by the train subcommand
  ModelConfig model;
  SyntheticTaskConfig task;
  std::vector<StagePlan> stages;  // index k holds stage k + 1
  AblationSettings ablation;
  GradcheckConfig gradcheck;
  EvalSettings eval;
  CorpusSettings corpus;
  RunInputs inputs;

  const StagePlan& stage_plan(int stage) const;
  /// Fills derived widths (task d, d_out and output tokens from the model)
  /// and checks every section. Throws ConfigError.
  void finalize();
};

/// Queries {112, 96, 64}, 6 layers, 4 experts, K=2, AdamW β = (0.9, 0.95),
/// clip 1.0, at width d = 16 and the desk-scale stage plans.
RunConfig default_run_config();

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json to_json(const PerceiverConfig& c);
nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const SyntheticTaskConfig& c);
nlohmann::json to_json(const StagePlan& c);

}  // namespace mvp
