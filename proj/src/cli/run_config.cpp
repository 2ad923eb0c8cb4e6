#include "mvp/cli/run_config.hpp"

#include <fstream>
#include <set>

#include "mvp/errors.hpp"

namespace mvp {

namespace {

using nlohmann::json;

// Reads keys from one JSON object, keeping defaults for absent keys and
// rejecting keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& dst) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError("unknown config key " + path_ + "." + key);
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read(const json& j, const std::string& path, PerceiverConfig& c) {
  Section s(j, path);
  s.get("d", c.d);
  s.get("levels", c.levels);
  s.get("queries_per_level", c.queries_per_level);
  s.get("n_layers", c.n_layers);
  s.get("n_experts", c.n_experts);
  s.get("top_k", c.top_k);
  s.get("ffn_hidden", c.ffn_hidden);
  s.get("pe_enabled", c.pe_enabled);
  std::string ffn = c.ffn == FfnKind::moe ? "moe" : "dense";
  s.get("ffn", ffn);
  if (ffn == "moe") c.ffn = FfnKind::moe;
  else if (ffn == "dense") c.ffn = FfnKind::dense;
  else throw ConfigError(s.path("ffn") + ": expected \"moe\" or \"dense\"");
  s.get("init_std", c.init_std);
  s.finish();
}

void read(const json& j, const std::string& path, ModelConfig& c) {
  Section s(j, path);
  if (auto p = s.child("perceiver")) read(*p, s.path("perceiver"), c.perceiver);
  s.get("d_llm", c.d_llm);
  s.get("lm_hidden", c.lm_hidden);
  if (auto p = s.child("lora")) {
    Section l(*p, s.path("lora"));
    l.get("rank", c.lora.rank);
    l.get("alpha", c.lora.alpha);
    l.finish();
  }
  s.get("lm_init_std", c.lm_init_std);
  s.finish();
}

void read(const json& j, const std::string& path, SyntheticTaskConfig& c) {
  Section s(j, path);
  s.get("tokens_per_level", c.tokens_per_level);
  s.get("latent_rank", c.latent_rank);
  s.get("level_noise", c.level_noise);
  s.get("n_train", c.n_train);
  s.get("n_val", c.n_val);
  s.get("seed", c.seed);
  s.finish();
}

void read(const json& j, const std::string& path, StagePlan& c) {
  Section s(j, path);
  s.get("steps", c.steps);
  s.get("batch_size", c.batch_size);
  s.get("data_source", c.data_source);
  if (auto p = s.child("optimizer")) {
    Section o(*p, s.path("optimizer"));
    o.get("peak_lr", c.optimizer.peak_lr);
    o.get("beta1", c.optimizer.beta1);
    o.get("beta2", c.optimizer.beta2);
    o.get("eps", c.optimizer.eps);
    o.get("weight_decay", c.optimizer.weight_decay);
    o.get("grad_clip", c.optimizer.grad_clip);
    o.get("warmup", c.optimizer.warmup);
    o.finish();
  }
  s.finish();
}

void derive_task(const ModelConfig& model, SyntheticTaskConfig& task) {
  task.d = model.perceiver.d;
  task.d_out = model.d_llm;
  task.output_tokens = model.perceiver.output_tokens();
  if (task.tokens_per_level.size() != model.perceiver.levels) {
    throw ConfigError("task.tokens_per_level has " + std::to_string(task.tokens_per_level.size()) +
                      " entries, perceiver has " + std::to_string(model.perceiver.levels) + " levels");
  }
}

}  // namespace

json to_json(const PerceiverConfig& c) {
  return {{"d", c.d},
          {"levels", c.levels},
          {"queries_per_level", c.queries_per_level},
          {"n_layers", c.n_layers},
          {"n_experts", c.n_experts},
          {"top_k", c.top_k},
          {"ffn_hidden", c.ffn_hidden},
          {"pe_enabled", c.pe_enabled},
          {"ffn", c.ffn == FfnKind::moe ? "moe" : "dense"},
          {"init_std", c.init_std}};
}

json to_json(const ModelConfig& c) {
  return {{"perceiver", to_json(c.perceiver)},
          {"d_llm", c.d_llm},
          {"lm_hidden", c.lm_hidden},
          {"lora", {{"rank", c.lora.rank}, {"alpha", c.lora.alpha}}},
          {"lm_init_std", c.lm_init_std}};
}

json to_json(const SyntheticTaskConfig& c) {
  return {{"tokens_per_level", c.tokens_per_level},
          {"latent_rank", c.latent_rank},
          {"level_noise", c.level_noise},
          {"n_train", c.n_train},
          {"n_val", c.n_val},
          {"seed", c.seed}};
}

json to_json(const StagePlan& c) {
  const auto& o = c.optimizer;
  return {{"steps", c.steps},
          {"batch_size", c.batch_size},
          {"data_source", c.data_source},
          {"optimizer",
           {{"peak_lr", o.peak_lr},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.eps},
            {"weight_decay", o.weight_decay},
            {"grad_clip", o.grad_clip},
            {"warmup", o.warmup}}}};
}

const StagePlan& RunConfig::stage_plan(int stage) const {
  if (stage < 1 || stage > static_cast<int>(stages.size())) {
    throw ConfigError("stage must be between 1 and " + std::to_string(stages.size()));
  }
  return stages[static_cast<std::size_t>(stage - 1)];
}

void RunConfig::finalize() {
  model.perceiver.validate();
  model.lora.validate();
  derive_task(model, task);
  task.validate();
  if (stages.size() != 3) throw ConfigError("stages must list exactly 3 stage plans");
  if (stage < 1 || stage > 3) throw ConfigError("stage must be 1, 2 or 3");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].stage = static_cast<int>(i) + 1;
    stages[i].validate();
  }
  ablation.model.perceiver.validate();
  if (ablation.model.perceiver.ffn != FfnKind::moe) throw ConfigError("ablation.model.perceiver.ffn must be moe");
  derive_task(ablation.model, ablation.task);
  ablation.task.validate();
  ablation.plan.stage = 1;
  ablation.plan.validate();
  if (ablation.seeds.empty()) throw ConfigError("ablation.seeds is empty");
  gradcheck.perceiver.validate();
  if (!(gradcheck.tolerance > 0.0)) throw ConfigError("gradcheck.tolerance must be positive");
  if (eval.threads < 0) throw ConfigError("eval.threads must be >= 0");
}

RunConfig default_run_config() {
  RunConfig c;
  c.model.perceiver.d = 16;
  c.model.d_llm = 16;
  c.model.lm_hidden = 32;
  for (int s = 1; s <= 3; ++s) c.stages.push_back(toy_stage_plan(s));

  auto& ab = c.ablation;
  ab.model.perceiver.d = 16;
  ab.model.perceiver.queries_per_level = {8, 6, 4};
  ab.model.perceiver.n_layers = 2;
  ab.model.perceiver.ffn_hidden = 4;
  ab.model.d_llm = 16;
  ab.model.lm_hidden = 32;
  ab.task.tokens_per_level = {8, 8, 8};
  ab.task.latent_rank = 2;
  ab.task.n_train = 2000;
  ab.task.n_val = 64;
  ab.plan.steps = 600;
  ab.plan.batch_size = 16;
  ab.plan.optimizer.peak_lr = 1e-2;
  ab.plan.optimizer.warmup = 60;

  c.finalize();
  return c;
}

json to_json(const RunConfig& c) {
  json stages = json::array();
  for (const auto& p : c.stages) stages.push_back(to_json(p));
  const auto& g = c.gradcheck;
  return {
      {"seed", c.seed},
      {"stage", c.stage},
      {"model", to_json(c.model)},
      {"task", to_json(c.task)},
      {"stages", std::move(stages)},
      {"ablation",
       {{"model", to_json(c.ablation.model)},
        {"task", to_json(c.ablation.task)},
        {"plan", to_json(c.ablation.plan)},
        {"seeds", c.ablation.seeds},
        {"rich_latent_rank", c.ablation.rich_latent_rank}}},
      {"gradcheck",
       {{"perceiver", to_json(g.perceiver)},
        {"tokens_per_level", g.tokens_per_level},
        {"samples", g.samples},
        {"tolerance", g.tolerance},
        {"step", g.step},
        {"stencil", g.stencil == FdStencil::central4 ? "central4" : "central2"},
        {"min_margin", g.min_margin},
        {"max_attempts", g.max_attempts},
        {"param_std", g.param_std},
        {"seed", g.seed},
        {"dense_equivalence", g.dense_equivalence}}},
      {"eval",
       {{"adapter", c.eval.adapter},
        {"adapter_cmd", c.eval.adapter_cmd},
        {"one_shot", c.eval.one_shot},
        {"threads", c.eval.threads},
        {"grounding_threshold", c.eval.grounding_threshold}}},
      {"corpus",
       {{"scorer", c.corpus.scorer},
        {"scorer_cmd", c.corpus.scorer_cmd},
        {"scorer_seed", c.corpus.scorer_seed},
        {"reference", c.corpus.reference}}},
      {"inputs",
       {{"mcq_items", c.inputs.mcq_items},
        {"grounding_items", c.inputs.grounding_items},
        {"corpora", c.inputs.corpora},
        {"init", c.inputs.init}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c = default_run_config();
  Section s(j, "config");
  s.get("seed", c.seed);
  s.get("stage", c.stage);
  if (auto p = s.child("model")) read(*p, "config.model", c.model);
  if (auto p = s.child("task")) read(*p, "config.task", c.task);
  if (auto p = s.child("stages")) {
    if (!p->is_array() || p->size() != 3) throw ConfigError("config.stages: expected an array of 3 stage plans");
    for (std::size_t i = 0; i < 3; ++i) read((*p)[i], "config.stages[" + std::to_string(i) + "]", c.stages[i]);
  }
  if (auto p = s.child("ablation")) {
    Section a(*p, "config.ablation");
    if (auto q = a.child("model")) read(*q, a.path("model"), c.ablation.model);
    if (auto q = a.child("task")) read(*q, a.path("task"), c.ablation.task);
    if (auto q = a.child("plan")) read(*q, a.path("plan"), c.ablation.plan);
    a.get("seeds", c.ablation.seeds);
    a.get("rich_latent_rank", c.ablation.rich_latent_rank);
    a.finish();
  }
  if (auto p = s.child("gradcheck")) {
    auto& g = c.gradcheck;
    Section a(*p, "config.gradcheck");
    if (auto q = a.child("perceiver")) read(*q, a.path("perceiver"), g.perceiver);
    a.get("tokens_per_level", g.tokens_per_level);
    a.get("samples", g.samples);
    a.get("tolerance", g.tolerance);
    a.get("step", g.step);
    std::string stencil = g.stencil == FdStencil::central4 ? "central4" : "central2";
    a.get("stencil", stencil);
    if (stencil == "central4") g.stencil = FdStencil::central4;
    else if (stencil == "central2") g.stencil = FdStencil::central2;
    else throw ConfigError("config.gradcheck.stencil: expected \"central2\" or \"central4\"");
    a.get("min_margin", g.min_margin);
    a.get("max_attempts", g.max_attempts);
    a.get("param_std", g.param_std);
    a.get("seed", g.seed);
    a.get("dense_equivalence", g.dense_equivalence);
    a.finish();
  }
  if (auto p = s.child("eval")) {
    Section a(*p, "config.eval");
    a.get("adapter", c.eval.adapter);
    a.get("adapter_cmd", c.eval.adapter_cmd);
    a.get("one_shot", c.eval.one_shot);
    a.get("threads", c.eval.threads);
    a.get("grounding_threshold", c.eval.grounding_threshold);
    a.finish();
  }
  if (auto p = s.child("corpus")) {
    Section a(*p, "config.corpus");
    a.get("scorer", c.corpus.scorer);
    a.get("scorer_cmd", c.corpus.scorer_cmd);
    a.get("scorer_seed", c.corpus.scorer_seed);
    a.get("reference", c.corpus.reference);
    a.finish();
  }
  if (auto p = s.child("inputs")) {
    Section a(*p, "config.inputs");
    a.get("mcq_items", c.inputs.mcq_items);
    a.get("grounding_items", c.inputs.grounding_items);
    a.get("corpora", c.inputs.corpora);
    a.get("init", c.inputs.init);
    a.finish();
  }
  s.finish();
  c.finalize();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError(path.string(), 0, "cannot open config");
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw InputError(path.string(), 0, e.what());
  }
  return run_config_from_json(j);
}

}  // namespace mvp
