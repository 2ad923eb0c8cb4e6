#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mvp {

/// Shapes of operands do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration value violates its invariant.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A caller broke an operation precondition (non-scalar loss, length mismatch, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An operation was invoked out of order (e.g. stage 2 before stage 1).
class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Text could not be parsed (bbox spans, checkpoint payloads).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed record in an input file; carries the location.
class InputError : public std::runtime_error {
 public:
  InputError(std::string file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

}  // namespace mvp
