#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace sevgp {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Wrong dimensions, out-of-domain hyperparameters and similar caller errors.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Malformed configuration, model files or kernel expressions.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Missing files, missing columns, unusable data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Cholesky factorization failed even after jitter escalation.
class NotPositiveDefinite : public Error {
 public:
  NotPositiveDefinite(const std::string& what, double min_eigenvalue)
      : Error(what), min_eigenvalue_(min_eigenvalue) {}

  double min_eigenvalue() const { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

/// Non-finite objective or gradient during optimization.
class NumericalError : public Error {
 public:
  explicit NumericalError(const std::string& what,
                          std::optional<long> iteration = std::nullopt)
      : Error(what), iteration_(iteration) {}

  std::optional<long> iteration() const { return iteration_; }

 private:
  std::optional<long> iteration_;
};

}  // namespace sevgp
