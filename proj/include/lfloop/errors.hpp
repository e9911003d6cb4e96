#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lfloop {

/// Caller violated an operation's precondition (bad shapes, wrong task kind, ...).
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Run configuration cannot be satisfied (missing annotations, bad values).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input file could not be parsed. `line()` is 1-based, 0 when not line-specific.
class LoadError : public std::runtime_error {
 public:
  LoadError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Chat backend failed (non-retryable HTTP status, retries exhausted, ...).
class BackendError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Replay backend has no record for a request hash.
class ReplayMiss : public BackendError {
 public:
  explicit ReplayMiss(const std::string& hash)
      : BackendError("replay miss: no transcript record for request " + hash), hash_(hash) {}
  const std::string& hash() const noexcept { return hash_; }

 private:
  std::string hash_;
};

/// A sampler was asked for an instance from an empty pool.
class PoolExhausted : public std::runtime_error {
 public:
  PoolExhausted() : std::runtime_error("query pool exhausted") {}
};

/// Pearson correlation with a zero-variance input.
class UndefinedCorrelation : public std::domain_error {
 public:
  UndefinedCorrelation() : std::domain_error("correlation undefined: zero variance input") {}
};

}  // namespace lfloop
