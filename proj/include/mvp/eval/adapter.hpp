#pragma once

#include <cstdint>
#include <memory>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvp/eval/mcq.hpp"

namespace mvp {

class AdapterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Answers one prompt. Implementations must be stateless across prompts and
/// safe to call from several threads.
class ModelAdapter {
 public:
  virtual ~ModelAdapter() = default;
  virtual std::string answer(const std::string& prompt) = 0;
  virtual std::string name() const = 0;
};

/// Caches answers per prompt: the same prompt always yields the same
/// output within one run. Reads are concurrent, writes serialized.
/// Failures are not cached.
class MemoizingAdapter final : public ModelAdapter {
 public:
  explicit MemoizingAdapter(ModelAdapter& inner) : inner_(inner) {}

  std::string answer(const std::string& prompt) override;
  std::string name() const override { return inner_.name(); }
  std::size_t cache_size() const;
  std::size_t inner_calls() const;

 private:
  ModelAdapter& inner_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, std::string> cache_;
  std::size_t inner_calls_ = 0;
};

/// Knows every rotation of a fixed item set and answers with the correct letter.
class OracleAdapter final : public ModelAdapter {
 public:
  explicit OracleAdapter(const std::vector<MCQItem>& items);
  std::string answer(const std::string& prompt) override;
  std::string name() const override { return "oracle"; }

 private:
  std::unordered_map<std::string, std::string> answers_;
};

/// Answers the full text of the correct option instead of its letter.
class FullTextAdapter final : public ModelAdapter {
 public:
  explicit FullTextAdapter(const std::vector<MCQItem>& items);
  std::string answer(const std::string& prompt) override;
  std::string name() const override { return "fulltext"; }

 private:
  std::unordered_map<std::string, std::string> answers_;
};

class ConstantAdapter final : public ModelAdapter {
 public:
  explicit ConstantAdapter(std::string reply) : reply_(std::move(reply)) {}
  std::string answer(const std::string&) override { return reply_; }
  std::string name() const override { return "constant:" + reply_; }

 private:
  std::string reply_;
};

/// Uniform letter over the options present in the prompt, drawn from a hash
/// of (seed, prompt), so it is a pure function of the prompt.
class RandomGuessAdapter final : public ModelAdapter {
 public:
  explicit RandomGuessAdapter(std::uint64_t seed) : seed_(seed) {}
  std::string answer(const std::string& prompt) override;
  std::string name() const override { return "random:" + std::to_string(seed_); }

 private:
  std::uint64_t seed_;
};

/// Runs `/bin/sh -c command` once per prompt: the prompt plus '\n' goes to
/// stdin, the first line of stdout (newline stripped) is the answer.
/// A non-zero exit status raises AdapterError.
class SubprocessAdapter final : public ModelAdapter {
 public:
  explicit SubprocessAdapter(std::string command) : command_(std::move(command)) {}
  std::string answer(const std::string& prompt) override;
  std::string name() const override { return "subprocess:" + command_; }

 private:
  std::string command_;
};

/// Prepends a fixed solved example to each prompt, for models that ignore
/// the letter-only instruction when asked cold.
class OneShotAdapter final : public ModelAdapter {
 public:
  explicit OneShotAdapter(ModelAdapter& inner) : inner_(inner) {}
  std::string answer(const std::string& prompt) override;
  std::string name() const override { return inner_.name() + "+one-shot"; }

  static const std::string& exemplar();

 private:
  ModelAdapter& inner_;
};

/// Runs `/bin/sh -c command`, feeding `input` on stdin. Returns stdout.
/// Throws AdapterError when the process cannot start or exits non-zero.
std::string run_subprocess(const std::string& command, const std::string& input);

}  // namespace mvp
