#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "mvp/cli/run_config.hpp"

namespace mvp::cli {

enum ExitCode : int {
  kSuccess = 0,
  kValidationFailure = 1,  // checks failed, bad config, out-of-order stages
  kInputError = 2,         // unreadable or malformed input files, bad arguments
};

/// Collects outputs in a hidden sibling directory and moves them into place
/// only on commit(); an uncommitted stage is deleted, so a failed command
/// never leaves partial result files behind.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path target);
  ~OutputDir();
  OutputDir(const OutputDir&) = delete;
  OutputDir& operator=(const OutputDir&) = delete;

  void write(const std::string& relative, const std::string& bytes);
  void commit();
  const std::filesystem::path& target() const { return target_; }

 private:
  std::filesystem::path target_;
  std::filesystem::path staging_;
  std::vector<std::string> files_;
  bool committed_ = false;
};

/// Each command throws on invalid input and returns an ExitCode otherwise.
/// `out` receives the human-readable summary.
int cmd_gradcheck(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out);
int cmd_train(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out);
int cmd_ablate(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out);
int cmd_eval_mcq(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out);
int cmd_eval_grounding(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out);
int cmd_corpus_stats(const RunConfig& config, const std::filesystem::path& out_dir, std::ostream& out);

/// Parses arguments, dispatches, and maps exceptions to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace mvp::cli
