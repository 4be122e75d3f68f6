#pragma once

#include <stdexcept>
#include <string>

namespace adaptkit {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not line up for an operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition was not met by the caller.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// A forward pass produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint bytes failed magic, version or hash validation.
class CorruptCheckpointError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage ran before the stage that produces its inputs.
class DependencyError : public Error {
 public:
  DependencyError(const std::string& artifact, const std::string& command)
      : Error("missing artifact '" + artifact + "': run '" + command + "' first"),
        command_(command) {}

  const std::string& command() const noexcept { return command_; }

 private:
  std::string command_;
};

/// Frozen task parameters changed while they were supposed to be read-only.
class FrozenTaskViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace adaptkit
