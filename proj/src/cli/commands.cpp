#include "mvp/cli/commands.hpp"

#include <unistd.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <ostream>
#include <sstream>

#include "mvp/corpus/corpus.hpp"
#include "mvp/errors.hpp"
#include "mvp/eval/adapter.hpp"
#include "mvp/eval/grounding.hpp"
#include "mvp/eval/mcq.hpp"
#include "mvp/tensor/checkpoint.hpp"

namespace mvp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

OutputDir::OutputDir(fs::path target) : target_(std::move(target)) {
  if (target_.empty()) throw ConfigError("output directory is empty");
  auto parent = fs::absolute(target_).parent_path();
  fs::create_directories(parent);
  staging_ = parent / ("." + target_.filename().string() + ".staging-" + std::to_string(::getpid()));
  fs::remove_all(staging_);
  fs::create_directories(staging_);
}

OutputDir::~OutputDir() {
  if (!committed_) {
    std::error_code ec;
    fs::remove_all(staging_, ec);
  }
}

void OutputDir::write(const std::string& relative, const std::string& bytes) {
  if (committed_) throw ContractError("OutputDir: write after commit");
  const auto path = staging_ / relative;
  fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("cannot write " + path.string());
  files_.push_back(relative);
}

void OutputDir::commit() {
  fs::create_directories(target_);
  for (const auto& rel : files_) {
    const auto dst = target_ / rel;
    fs::create_directories(dst.parent_path());
    fs::rename(staging_ / rel, dst);
  }
  fs::remove_all(staging_);
  committed_ = true;
}

namespace {

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError(path.string(), 0, "cannot open file");
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json log_record_json(const LogRecord& r) {
  return {{"step", r.step}, {"stage", r.stage}, {"loss", r.loss}, {"lr", r.lr}, {"grad_norm", r.grad_norm}};
}

std::string log_jsonl(const std::vector<LogRecord>& log) {
  std::string out;
  for (const auto& r : log) out += log_record_json(r).dump() + "\n";
  return out;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace

int cmd_gradcheck(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
  OutputDir dir(out_dir);
  const auto report = run_gradcheck(config.gradcheck);
  dir.write("config.json", dump(to_json(config)));
  dir.write("gradcheck.json", dump(report.to_json()));
  dir.commit();

  for (const auto& g : report.groups) {
    out << (g.pass ? "ok   " : "FAIL ") << g.name << "  max rel " << g.max_rel_error << "\n";
  }
  if (report.dense) {
    out << (report.dense->bit_identical ? "ok   " : "FAIL ") << "dense_equivalence  max abs "
        << report.dense->max_abs_diff << "\n";
  }
  const auto failures = report.failures();
  if (!failures.empty()) {
    out << "gradcheck failed:";
    for (const auto& f : failures) out << ' ' << f;
    out << "\n";
    return kValidationFailure;
  }
  out << "gradcheck passed: " << report.groups.size() << " parameter groups, " << report.samples << " samples\n";
  return kSuccess;
}

int cmd_train(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
  const auto& plan = config.stage_plan(config.stage);
  auto model = BridgeModel::init(config.model, config.seed);
  if (!config.inputs.init.empty()) {
    const fs::path init = config.inputs.init;
    const auto state_path = init / "run_state.json";
    json state;
    try {
      state = json::parse(read_file(state_path));
      model.completed_stage = state.at("completed_stage").get<int>();
    } catch (const json::exception& e) {
      throw InputError(state_path.string(), 0, e.what());
    }
    std::vector<NamedTensor> loaded;
    try {
      loaded = load_checkpoint(init / "checkpoint.bin");
      assign_parameters(model.named_parameters(), loaded);
    } catch (const InputError&) {
      throw;
    } catch (const std::exception& e) {
      throw InputError((init / "checkpoint.bin").string(), 0, e.what());
    }
  }
  if (model.completed_stage != config.stage - 1) {
    throw StateError("stage " + std::to_string(config.stage) + " needs the checkpoint of stage " +
                     std::to_string(config.stage - 1) +
                     (config.inputs.init.empty() ? " (pass --init <run dir>)"
                                                 : ", but --init holds stage " + std::to_string(model.completed_stage)));
  }

  OutputDir dir(out_dir);
  const SyntheticTask task(config.task);
  const auto result = run_stage(plan, model, task, config.seed);

  const auto params = model.named_parameters();
  json summary{{"stage", config.stage},
               {"steps", plan.steps},
               {"trainable_parameters", result.trainable_count},
               {"initial_loss", result.log.empty() ? 0.0 : result.log.front().loss},
               {"final_train_loss", smoothed_loss(result.log, 10)},
               {"final_val_loss", result.final_val_loss},
               {"checkpoint_checksum", parameter_checksum(params)}};
  dir.write("config.json", dump(to_json(config)));
  dir.write("log.jsonl", log_jsonl(result.log));
  dir.write("checkpoint.bin", encode_checkpoint(params));
  dir.write("run_state.json", dump({{"completed_stage", model.completed_stage}}));
  dir.write("summary.json", dump(summary));
  dir.commit();

  out << "stage " << config.stage << ": " << plan.steps << " steps, " << result.trainable_count
      << " trainable parameters\n"
      << "train loss " << fixed(summary["initial_loss"].get<double>()) << " -> "
      << fixed(summary["final_train_loss"].get<double>()) << ", val loss " << fixed(result.final_val_loss) << "\n";
  return kSuccess;
}

namespace {

json ablation_json(const AblationResult& r, std::size_t latent_rank) {
  json rows = json::array();
  for (const auto& row : r.rows) {
    rows.push_back({{"variant", row.variant},
                    {"seed", row.seed},
                    {"activated_params", row.activated_params},
                    {"total_params", row.total_params},
                    {"initial_loss", row.initial_loss},
                    {"final_train_loss", row.final_train_loss},
                    {"final_val_loss", row.final_val_loss}});
  }
  return {{"latent_rank", latent_rank},
          {"rows", std::move(rows)},
          {"moe_mean_val", r.moe_mean_val},
          {"vanilla_mean_val", r.vanilla_mean_val},
          {"moe_mean_train", r.moe_mean_train},
          {"vanilla_mean_train", r.vanilla_mean_train},
          {"moe_val_not_worse", r.moe_not_worse()},
          {"moe_train_lower", r.moe_train_lower()}};
}

std::string ablation_table(const std::string& title, const AblationResult& r) {
  std::ostringstream os;
  os << "### " << title << "\n\n";
  os << "| Variant | Seed | Activated params | Total params | Initial loss | Final train loss | Final val loss |\n";
  os << "|---|---|---|---|---|---|---|\n";
  for (const auto& row : r.rows) {
    os << "| " << row.variant << " | " << row.seed << " | " << row.activated_params << " | " << row.total_params
       << " | " << fixed(row.initial_loss) << " | " << fixed(row.final_train_loss) << " | "
       << fixed(row.final_val_loss) << " |\n";
  }
  os << "| moe mean | | | | | " << fixed(r.moe_mean_train) << " | " << fixed(r.moe_mean_val) << " |\n";
  os << "| vanilla mean | | | | | " << fixed(r.vanilla_mean_train) << " | " << fixed(r.vanilla_mean_val) << " |\n";
  return os.str();
}

}  // namespace

int cmd_ablate(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
  const auto& ab = config.ablation;
  OutputDir dir(out_dir);
  json doc;
  std::string md = "## MoE vs vanilla perceiver\n\n";

  auto run = [&](const std::string& label, const SyntheticTaskConfig& task) {
    const auto result = run_ablation(ab.model, task, ab.plan, ab.seeds);
    doc[label] = ablation_json(result, task.latent_rank);
    md += ablation_table(label + " task (latent rank " + std::to_string(task.latent_rank) + ")", result) + "\n";
    for (const auto& row : result.rows) {
      const auto stem = label + "_" + row.variant + "_seed" + std::to_string(row.seed);
      dir.write("logs/" + stem + ".jsonl", log_jsonl(row.log));
      dir.write("checkpoints/" + stem + ".bin", encode_checkpoint(row.parameters));
    }
    return result;
  };

  const auto base = run("base", ab.task);
  out << "base: moe val " << fixed(base.moe_mean_val) << " vs vanilla " << fixed(base.vanilla_mean_val)
      << (base.moe_not_worse() ? "  (moe <= vanilla)" : "  (moe > vanilla)") << "\n";
  if (ab.rich_latent_rank > 0) {
    auto rich_task = ab.task;
    rich_task.latent_rank = ab.rich_latent_rank;
    const auto rich = run("rich", rich_task);
    out << "rich: moe train " << fixed(rich.moe_mean_train) << " vs vanilla " << fixed(rich.vanilla_mean_train)
        << (rich.moe_train_lower() ? "  (moe < vanilla)" : "  (moe >= vanilla)") << "\n";
  }
  dir.write("config.json", dump(to_json(config)));
  dir.write("ablation.json", dump(doc));
  dir.write("ablation.md", md);
  dir.commit();
  return kSuccess;
}

namespace {

std::unique_ptr<ModelAdapter> make_adapter(const EvalSettings& eval, const std::vector<MCQItem>& items,
                                           std::uint64_t seed) {
  const auto& kind = eval.adapter;
  if (!eval.adapter_cmd.empty() || kind == "subprocess") {
    if (eval.adapter_cmd.empty()) throw ConfigError("adapter \"subprocess\" needs --adapter-cmd");
    return std::make_unique<SubprocessAdapter>(eval.adapter_cmd);
  }
  if (kind == "oracle") return std::make_unique<OracleAdapter>(items);
  if (kind == "fulltext") return std::make_unique<FullTextAdapter>(items);
  if (kind.rfind("constant:", 0) == 0) return std::make_unique<ConstantAdapter>(kind.substr(9));
  if (kind == "random") return std::make_unique<RandomGuessAdapter>(seed);
  if (kind.rfind("random:", 0) == 0) {
    try {
      return std::make_unique<RandomGuessAdapter>(std::stoull(kind.substr(7)));
    } catch (const std::logic_error&) {
      throw ConfigError("bad random adapter seed in \"" + kind + "\"");
    }
  }
  throw ConfigError("unknown adapter \"" + kind + "\"");
}

}  // namespace

int cmd_eval_mcq(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
  if (config.inputs.mcq_items.empty()) throw ConfigError("eval-mcq needs an items file (--items)");
  const auto items = load_mcq_items(config.inputs.mcq_items);
  auto adapter = make_adapter(config.eval, items, config.seed);
  std::unique_ptr<ModelAdapter> wrapped;
  ModelAdapter* active = adapter.get();
  if (config.eval.one_shot) {
    wrapped = std::make_unique<OneShotAdapter>(*adapter);
    active = wrapped.get();
  }

  OutputDir dir(out_dir);
  const auto report = circular_evaluate(items, *active, EvalOptions{config.eval.threads});
  const auto table = report.render_table();
  dir.write("config.json", dump(to_json(config)));
  dir.write("report.json", dump(report.to_json()));
  dir.write("report.md", table);
  dir.commit();

  out << table;
  if (report.adapter_failures) out << report.adapter_failures << " adapter failures recorded in report.json\n";
  return kSuccess;
}

int cmd_eval_grounding(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
  if (config.inputs.grounding_items.empty()) throw ConfigError("eval-grounding needs an items file (--items)");
  const auto items = load_grounding_items(config.inputs.grounding_items);
  OutputDir dir(out_dir);
  const auto report = evaluate_grounding(items, config.eval.grounding_threshold);
  dir.write("config.json", dump(to_json(config)));
  dir.write("grounding.json", dump(report.to_json()));
  dir.commit();
  out << "accuracy@" << config.eval.grounding_threshold << " = " << fixed(report.accuracy()) << " (" << report.correct
      << "/" << report.items.size() << ", " << report.parse_failures << " unparseable)\n";
  return kSuccess;
}

int cmd_corpus_stats(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
  const auto& cs = config.corpus;
  if (config.inputs.corpora.empty() && cs.reference.empty()) {
    throw ConfigError("corpus-stats needs at least one corpus file or --reference");
  }
  std::vector<Corpus> corpora;
  for (const auto& path : config.inputs.corpora) corpora.push_back(load_corpus(path));
  std::vector<CorpusMetrics> reference;
  if (!cs.reference.empty()) {
    reference = load_reference_metrics(cs.reference);
    if (reference.size() < 2) throw InputError(cs.reference, 0, "reference needs two corpora");
  }

  std::unique_ptr<AlignmentScorer> scorer;
  if (!cs.scorer_cmd.empty() || cs.scorer == "subprocess") {
    if (cs.scorer_cmd.empty()) throw ConfigError("scorer \"subprocess\" needs --scorer-cmd");
    scorer = std::make_unique<SubprocessScorer>(cs.scorer_cmd);
  } else if (cs.scorer == "hash") {
    scorer = std::make_unique<HashStubScorer>(cs.scorer_seed);
  } else if (cs.scorer != "none") {
    throw ConfigError("unknown scorer \"" + cs.scorer + "\"");
  }

  OutputDir dir(out_dir);
  dir.write("config.json", dump(to_json(config)));
  std::vector<CorpusReport> reports;
  for (std::size_t i = 0; i < corpora.size(); ++i) {
    auto report = corpus_report(corpora[i], scorer.get());
    const auto stem = std::to_string(i) + "_" + report.name;
    dir.write(stem + ".report.json", dump(report.to_json()));
    dir.write(stem + ".lengths.csv", report.length_csv());
    if (report.scores) dir.write(stem + ".scores.csv", report.score_csv());
    out << report.name << ": " << report.captions << " captions, " << report.unique_words << " unique words, "
        << report.unique_trigrams << " unique trigrams, avg length " << fixed(report.avg_length, 2);
    if (report.scores) out << ", mean score " << fixed(report.scores->mean, 2);
    out << "\n";
    reports.push_back(std::move(report));
  }
  if (reports.size() >= 2) {
    const auto cmp = compare_reports(reports[0].metrics(), reports[1].metrics());
    dir.write("comparison.json", dump(cmp.to_json()));
    dir.write("comparison.md", cmp.render_table());
    out << "\n" << cmp.render_table();
  }
  if (!reference.empty()) {
    const auto cmp = compare_reports(reference[0], reference[1]);
    dir.write("reference.md", cmp.render_table());
    out << "\nreference values:\n" << cmp.render_table();
  }
  dir.commit();
  return kSuccess;
}

}  // namespace mvp::cli
