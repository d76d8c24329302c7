#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sevgp/kernels.hpp"
#include "sevgp/objectives.hpp"

namespace sevgp {

/// Column-wise z-score statistics, fitted on training rows only.
struct Standardization {
  Vector x_mean;
  Vector x_sd;  ///< 1 for columns passed through unscaled
  double y_mean = 0.0;
  double y_sd = 1.0;
};

struct Dataset {
  Matrix X;
  Vector y;
  std::vector<std::string> feature_names;
  std::string target_name = "y";
  /// Set when the data has been standardized.
  std::optional<Standardization> standardization;
  /// Rows dropped while loading (non-numeric or missing entries).
  Index dropped_rows = 0;
  std::vector<std::string> warnings;

  Index size() const { return X.rows(); }
  Index num_features() const { return X.cols(); }
  /// Per-dimension (min, max) of X.
  std::vector<Bounds> bounds() const;
  Dataset subset(const std::vector<Index>& rows) const;
};

/// Checks finiteness, N >= 2 and shape agreement; throws DataError.
void validate(const Dataset& d);

/// x ~ U(-2, 2), y ~ N(0.25 x^2, 0.25).
Dataset gen_synthetic(Index n, std::uint64_t seed);

/// Reads a delimited file with a header row. The delimiter is detected among
/// comma, semicolon and tab; quoted header names are unquoted. Rows with
/// missing or non-numeric entries are dropped and counted.
Dataset load_csv(const std::filesystem::path& path, const std::string& target_column);

/// Same parsing without a target column (all columns become features).
Dataset load_features_csv(const std::filesystem::path& path,
                          const std::string& ignore_column = "");

Standardization fit_standardization(const Dataset& train);
Dataset apply_standardization(const Standardization& s, const Dataset& d);
Dataset invert_standardization(const Dataset& d);

/// Fits statistics on `train` and applies them to `apply_to`.
Dataset standardize(const Dataset& train, const Dataset& apply_to);

/// Seeded shuffle split into k folds whose sizes differ by at most one.
std::vector<std::vector<Index>> kfold(Index n, Index k, std::uint64_t seed);

double mse(const Vector& pred, const Vector& y);

struct StabilityResult {
  double value = 0.0;
  /// Rows with fewer than m distinct-location neighbours (all available used).
  Index short_rows = 0;
  /// Rows without any distinct neighbour (left out of the mean).
  Index isolated_rows = 0;
};

/// Mean over rows of max_{j in B_m(i)} ||F_i - F_j|| / ||x_i - x_j||, where
/// B_m(i) are the m nearest rows at nonzero Euclidean distance.
StabilityResult stability(const Matrix& coefficients, const Matrix& X, Index m = 10);
StabilityResult stability(const std::function<Vector(const Vector&)>& coef_at, const Matrix& X,
                          Index m = 10);

}  // namespace sevgp
