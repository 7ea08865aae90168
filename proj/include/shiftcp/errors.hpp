#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace shiftcp {

// Precondition violated by caller-supplied data.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Optimizer diverged (non-finite loss).
class FitFailure : public std::runtime_error {
 public:
  FitFailure(const std::string& what, std::size_t iteration, double last_loss)
      : std::runtime_error(what), iteration_(iteration), last_loss_(last_loss) {}

  std::size_t iteration() const noexcept { return iteration_; }
  double last_loss() const noexcept { return last_loss_; }

 private:
  std::size_t iteration_;
  double last_loss_;
};

// Every candidate of a hyperparameter search was degenerate.
class SearchFailure : public std::runtime_error {
 public:
  SearchFailure(const std::string& what, std::vector<double> bandwidths)
      : std::runtime_error(what), bandwidths_(std::move(bandwidths)) {}

  const std::vector<double>& bandwidths() const noexcept { return bandwidths_; }

 private:
  std::vector<double> bandwidths_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace shiftcp
