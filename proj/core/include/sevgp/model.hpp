#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sevgp/gaussian.hpp"
#include "sevgp/kernels.hpp"

namespace sevgp {

enum class Variant {
  V41,  ///< coefficient priors (sparse variational GPX)
  V42,  ///< full-function prior, functional bound
  V43,  ///< both priors, functional bound with trace correction
};

std::string to_string(Variant v);
/// Accepts "41", "4.1", "V41" and friends.
Variant parse_variant(std::string_view text);

/// One varying-coefficient unit: q(u) = N(a, L L^T) at inducing locations Z.
struct CoefficientBlock {
  Matrix Z;  ///< M x D inducing locations in input space
  Vector a;  ///< variational mean
  Matrix L;  ///< lower triangular, positive diagonal
  KernelSpec kernel;
  Index feature_index = 0;  ///< design-matrix column this coefficient multiplies
  bool train_inducing = true;

  Index num_inducing() const { return Z.rows(); }
  Matrix S() const { return L * L.transpose(); }
};

struct SevgpModel {
  std::vector<CoefficientBlock> blocks;
  double sigma2 = 0.1;
  Variant variant = Variant::V41;
  /// Prior p(f) over the whole function (V42, V43).
  std::optional<KernelSpec> full_prior_kernel;
  /// Priors p(u_k) over the inducing variables. Empty means every block's
  /// prior shares the block's own kernel (and its learned hyperparameters).
  std::vector<KernelSpec> coeff_prior_kernels;
  /// Prepends a column of ones to the design so an intercept coefficient
  /// exists. Kernels still act on the raw inputs.
  bool include_bias_column = false;

  Index num_blocks() const { return static_cast<Index>(blocks.size()); }
  /// Number of raw input features the model consumes.
  Index input_dim() const;
  bool tied_coeff_priors() const { return coeff_prior_kernels.empty(); }
};

/// Checks structural invariants (shapes, triangularity, variant-required
/// kernels); throws InvalidArgument.
void validate(const SevgpModel& m);

/// Kernel of the coefficient prior p(u_k).
const KernelSpec& coeff_prior_kernel(const SevgpModel& m, Index k);

/// Multiplier columns X_k: the raw inputs, with a leading ones column when
/// the model has a bias block.
Matrix design_matrix(const SevgpModel& m, const Matrix& X);

/// Lambda = K_NM (K_MM + jitter)^-1.
Matrix lambda_matrix(const CoefficientBlock& b, const Matrix& X);

/// q(f_M^(k)) at X: mean Lambda a, cov K_NN - Lambda (K_MM - S) Lambda^T.
GaussianDist coeff_posterior(const CoefficientBlock& b, const Matrix& X);

/// Mean and pointwise variance of q(f_M^(k)) at X, without forming the
/// full covariance.
struct Marginals {
  Vector mean;
  Vector var;
};
Marginals coeff_marginals(const CoefficientBlock& b, const Matrix& X);

/// q(f) at X: sum_k mu_k . X_k, sum_k Sigma_k . X_k X_k^T.
GaussianDist predict_f(const SevgpModel& m, const Matrix& X);
Marginals predict_f_marginals(const SevgpModel& m, const Matrix& X);

/// q(f | u) at X for fixed inducing values u_k.
GaussianDist conditional_f_given_inducing(const SevgpModel& m, const Matrix& X,
                                          std::span<const Vector> u);

/// predict_f with sigma2 added to the diagonal.
GaussianDist predict_y(const SevgpModel& m, const Matrix& X);
Marginals predict_y_marginals(const SevgpModel& m, const Matrix& X);

struct Contribution {
  double coeff_mean;
  double coeff_var;
  double contribution;  ///< coeff_mean * x_k
};

/// Per-block decomposition of the predictive mean at one input. The
/// contributions sum to predict_f(m, x).mean().
std::vector<Contribution> explain(const SevgpModel& m, const Vector& x);

/// Row-wise explain for many inputs: coefficient means (N x blocks).
Matrix coefficient_means(const SevgpModel& m, const Matrix& X);

/// Sum_k K_NN^(k) . X_k X_k^T under the coefficient prior kernels.
Matrix gpx_prior_cov(const SevgpModel& m, const Matrix& X);

// Persistence: versioned JSON document with full-precision numbers.
std::string model_to_json(const SevgpModel& m);
SevgpModel model_from_json(const std::string& text);
void save_model(const SevgpModel& m, const std::filesystem::path& path);
SevgpModel load_model(const std::filesystem::path& path);

}  // namespace sevgp
