#pragma once

#include <stdexcept>
#include <string>

namespace ambit {

// Thrown when a callback produces non-finite values or hits a model
// singularity guard during evaluation.
class EvaluationError : public std::runtime_error {
 public:
  explicit EvaluationError(const std::string& what) : std::runtime_error(what) {}
};

// Thrown when a query lies outside the documented domain (e.g. an
// interpolation point outside [-1, 1]).
class OutOfDomainError : public std::domain_error {
 public:
  explicit OutOfDomainError(const std::string& what) : std::domain_error(what) {}
};

// Thrown when a basis gram matrix is numerically singular.
class IllConditionedBasisError : public std::runtime_error {
 public:
  explicit IllConditionedBasisError(const std::string& what)
      : std::runtime_error(what) {}
};

// Configuration-level problems (unknown model, bad key, ...). Carries the
// offending key so the CLI can name it.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : std::runtime_error("config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace ambit
