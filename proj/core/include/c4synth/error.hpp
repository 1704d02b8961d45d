#pragma once

#include <stdexcept>
#include <string>

namespace c4synth {

// Bad user input: malformed config, wrong shapes, unknown tokens. The CLI maps
// these to exit status 2.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ShapeError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class ConfigError : public InvalidArgument {
 public:
  ConfigError(std::string field, const std::string& message)
      : InvalidArgument(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class VocabularyError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

// A test-class caption or image reached a code path reserved for training
// classes, or vice versa.
class FirewallError : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by the trainer when a loss term turns NaN/Inf. `term()` names it.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::string term, long iteration)
      : std::runtime_error("non-finite loss term '" + term + "' at iteration " +
                           std::to_string(iteration)),
        term_(std::move(term)) {}

  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

}  // namespace c4synth
