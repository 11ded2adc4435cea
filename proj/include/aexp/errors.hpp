#pragma once

#include <stdexcept>
#include <string>

namespace aexp {

// Bad configuration: unknown keys, invalid topology, agent/env mismatch.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Violated precondition (dimension mismatch, empty input, stale trace).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Non-finite value where a finite one is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

}  // namespace aexp
