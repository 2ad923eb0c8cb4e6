#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "mvp/cli/commands.hpp"
#include "mvp/errors.hpp"
#include "mvp/eval/adapter.hpp"
#include "mvp/tensor/ops.hpp"

namespace mvp::cli {

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> stage;
  std::string init;
  std::string items;
  std::string adapter;
  std::string adapter_cmd;
  bool one_shot = false;
  std::optional<int> threads;
  std::optional<double> threshold;
  std::vector<std::string> corpora;
  std::string scorer;
  std::string scorer_cmd;
  std::string reference;
  std::optional<std::size_t> samples;
  std::string inject_fault;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config_path, "Run config (JSON); defaults apply to absent keys");
  sub->add_option("--seed", o.seed, "Overrides the config seed");
  sub->add_option("--out", o.out, "Run directory for all outputs")->required();
}

RunConfig resolve(const std::string& command, const Options& o) {
  RunConfig c = o.config_path.empty() ? default_run_config() : load_run_config(o.config_path);
  if (o.seed) {
    c.seed = *o.seed;
    c.gradcheck.seed = *o.seed;
    c.corpus.scorer_seed = *o.seed;
    if (command == "ablate") c.ablation.seeds = {*o.seed, *o.seed + 1, *o.seed + 2};
  }
  if (o.stage) c.stage = *o.stage;
  if (!o.init.empty()) c.inputs.init = o.init;
  if (!o.items.empty()) (command == "eval-mcq" ? c.inputs.mcq_items : c.inputs.grounding_items) = o.items;
  if (!o.adapter.empty()) c.eval.adapter = o.adapter;
  if (!o.adapter_cmd.empty()) {
    c.eval.adapter_cmd = o.adapter_cmd;
    c.eval.adapter = "subprocess";
  }
  if (o.one_shot) c.eval.one_shot = true;
  if (o.threads) c.eval.threads = *o.threads;
  if (o.threshold) c.eval.grounding_threshold = *o.threshold;
  if (!o.corpora.empty()) c.inputs.corpora = o.corpora;
  if (!o.scorer.empty()) c.corpus.scorer = o.scorer;
  if (!o.scorer_cmd.empty()) {
    c.corpus.scorer_cmd = o.scorer_cmd;
    c.corpus.scorer = "subprocess";
  }
  if (!o.reference.empty()) c.corpus.reference = o.reference;
  if (o.samples) c.gradcheck.samples = *o.samples;
  c.finalize();
  return c;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"MoE vision perceiver: gradient checks, staged training, ablations and evaluation tools", "mvp"};
  app.require_subcommand(0, 1);
  bool print_config = false;
  app.add_flag("--print-default-config", print_config, "Write the default run config to stdout and exit");
  Options o;

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every perceiver parameter group");
  add_common(gradcheck, o);
  gradcheck->add_option("--samples", o.samples, "Number of accepted samples");
  gradcheck->add_option("--inject-fault", o.inject_fault, "Scale the adjoint of one op (testing hook)")
      ->group("Testing");

  auto* train = app.add_subcommand("train", "Train one curriculum stage on the synthetic task");
  add_common(train, o);
  train->add_option("--stage", o.stage, "Stage 1, 2 or 3")->check(CLI::Range(1, 3));
  train->add_option("--init", o.init, "Run directory of the previous stage");

  auto* ablate = app.add_subcommand("ablate", "MoE vs vanilla perceiver at matched activated width");
  add_common(ablate, o);

  auto* eval_mcq = app.add_subcommand("eval-mcq", "Circular multiple-choice evaluation");
  add_common(eval_mcq, o);
  eval_mcq->add_option("--items", o.items, "MCQ items (JSONL)");
  eval_mcq->add_option("--adapter", o.adapter, "oracle | fulltext | constant:<reply> | random[:<seed>]");
  eval_mcq->add_option("--adapter-cmd", o.adapter_cmd, "Shell command answering one prompt per run on stdin/stdout");
  eval_mcq->add_flag("--one-shot", o.one_shot, "Prepend a solved example to every prompt");
  eval_mcq->add_option("--threads", o.threads, "Worker threads (0 = OpenMP default)");

  auto* eval_grounding = app.add_subcommand("eval-grounding", "Grounding accuracy at an IoU threshold");
  add_common(eval_grounding, o);
  eval_grounding->add_option("--items", o.items, "Grounding items (JSONL)");
  eval_grounding->add_option("--threshold", o.threshold, "IoU must exceed this value");

  auto* corpus = app.add_subcommand("corpus-stats", "Caption corpus statistics and side-by-side comparison");
  add_common(corpus, o);
  corpus->add_option("corpora", o.corpora, "Corpus files (JSONL or id<TAB>text)");
  corpus->add_option("--scorer", o.scorer, "none | hash");
  corpus->add_option("--scorer-cmd", o.scorer_cmd, "Shell command scoring image<TAB>caption on stdin");
  corpus->add_option("--reference", o.reference, "Reference metrics document to render alongside");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (e.get_name() == "CallForAllHelp" ? app.help("", CLI::AppFormatMode::All) : app.help());
      return kSuccess;
    }
    err << "error: " << e.what() << "\n";
    return kInputError;
  }

  try {
    if (print_config) {
      out << to_json(default_run_config()).dump(2) << "\n";
      return kSuccess;
    }
    const auto subs = app.get_subcommands();
    if (subs.empty()) {
      out << app.help();
      return kInputError;
    }
    const std::string name = subs.front()->get_name();
    const auto config = resolve(name, o);
    if (!o.inject_fault.empty()) testing::set_adjoint_fault(o.inject_fault);
    if (name == "gradcheck") return cmd_gradcheck(config, o.out, out);
    if (name == "train") return cmd_train(config, o.out, out);
    if (name == "ablate") return cmd_ablate(config, o.out, out);
    if (name == "eval-mcq") return cmd_eval_mcq(config, o.out, out);
    if (name == "eval-grounding") return cmd_eval_grounding(config, o.out, out);
    if (name == "corpus-stats") return cmd_corpus_stats(config, o.out, out);
    return kInputError;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const ParseError& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const AdapterError& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "input error: " << e.what() << "\n";
    return kInputError;
  } catch (const StateError& e) {
    err << "state error: " << e.what() << "\n";
    return kValidationFailure;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kValidationFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kValidationFailure;
  }
}

}  // namespace mvp::cli
