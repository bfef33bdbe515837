// Copyright 2026 The deeptrf Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace deeptrf {

/// Incompatible tensor shapes or sequence lengths.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Invalid model, task or training configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed or unusable input data (audio, feature files, manifests).
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// NaN reached an operation that cannot propagate it meaningfully.
class NonFiniteError : public InputError {
 public:
  using InputError::InputError;
};

/// Caller violated an API contract (e.g. backward() on a non-scalar).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The label sequence cannot be emitted in the available number of frames.
class InfeasibleAlignment : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Training produced a non-finite loss.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace deeptrf
