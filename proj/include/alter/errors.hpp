// Copyright 2026 the alter authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace alter {

// Contract violations (bad shapes, bad arguments, schema mismatches).
// The CLI maps these to exit code 1.
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : ContractError {
  explicit ShapeError(const std::string& msg) : ContractError(msg) {}
};

// NaN/Inf escaping a kernel operation.
struct NumericError : ContractError {
  explicit NumericError(const std::string& msg) : ContractError(msg) {}
};

// Filesystem and serialization failures. CLI exit code 2.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training diverged or failed to reach a required gate.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace alter
