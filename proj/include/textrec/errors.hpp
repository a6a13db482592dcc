// Copyright 2026 The textrec Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace textrec {

/// Shapes of operands do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration value is invalid or unknown.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A value falls outside its permitted range.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A sequence exceeds its permitted length.
class LengthError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// An API precondition on call order or argument kind was violated.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// An operation was invoked on an object in the wrong state.
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A numerical procedure failed (singular system, non-finite values).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File-level I/O or format failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace textrec
