#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace stackheat {

/// Invalid user configuration. `key()` names the offending scenario key,
/// e.g. "follower_boxes[0]" or "alpha[1]".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(key + ": " + message), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Two objects that must live on the same grid do not.
class GridMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A dense oracle or eigensolve was requested on an instance that is too big.
class InstanceTooLarge : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An iterative method stopped before reaching its tolerance.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& message, double residual)
      : std::runtime_error(message + " (relative residual " +
                           std::to_string(residual) + ")"),
        residual_(residual) {}

  double residual() const noexcept { return residual_; }

 private:
  double residual_;
};

}  // namespace stackheat
