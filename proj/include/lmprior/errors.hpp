#pragma once

#include <stdexcept>
#include <string>

namespace lmprior {

// Bad values handed to a numeric or text routine (non-finite logits,
// mismatched dimensions, malformed files).
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Inconsistent settings: vocab mismatch between LM and TM, out-of-range
// hyperparameters, missing LM for a fusion mode.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Training blew up (NaN/Inf gradient); the message names the parameter.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Command-line misuse; maps to exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lmprior
