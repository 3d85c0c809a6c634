// Copyright (c) 2026 the shardtrain authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace shardtrain {

// Base class for all library errors. Subclasses map onto process exit codes
// in the CLI: ConfigError -> 2, NumericError -> 3, everything I/O- or
// protocol-shaped -> 4.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid user-supplied configuration or argument values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Tensor or matrix dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An operation was called in a state that cannot support it, e.g. a backward
// pass that needs activations which were neither retained nor replayable.
class StateError : public Error {
 public:
  using Error::Error;
};

// Non-finite values where finite math is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Collective misuse: mismatched rendezvous keys, mismatched payload lengths,
// invalid roots.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

// A collective can never complete because at least one participant already
// finished without joining it.
class DeadlockError : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

// Malformed persisted state: bad magic, bad version, truncated payload.
class FormatError : public Error {
 public:
  using Error::Error;
};

// A shard checkpoint was opened under a different world size.
class WorldMismatchError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace shardtrain
