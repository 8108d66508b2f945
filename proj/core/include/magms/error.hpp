// Copyright 2026 The magms Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace magms {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or arguments (empty sets, bad weights, unknown keys).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A required precondition on an operation's inputs was violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Tensor or volume shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A named entity (modality, parameter) was not found.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Sample content violates its invariants (missing modality, bad labels).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Failure reading a checkpoint or dataset from disk.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Argument outside a mathematical domain.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A request the caller spelled wrong (unknown format, malformed value).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Two artifacts that must agree do not.
class ComparisonError : public Error {
 public:
  using Error::Error;
};

}  // namespace magms
