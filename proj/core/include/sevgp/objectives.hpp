#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "sevgp/gaussian.hpp"
#include "sevgp/model.hpp"

namespace sevgp {

using Bounds = std::pair<double, double>;

/// Points on which process-level KL divergences are evaluated. The first
/// n_train rows are the (batch) training inputs, the rest augmentation points.
struct MeasurementSet {
  Matrix X;
  Index n_train = 0;

  Index num_augmentation() const { return X.rows() - n_train; }
};

MeasurementSet make_measurement_set(const Matrix& batch, const Matrix& augmentation);

/// `count` i.i.d. uniform rows inside the per-dimension bounds.
Matrix sample_augmentation(const std::vector<Bounds>& bounds, Index count, std::uint64_t seed);
Matrix sample_augmentation(const std::vector<Bounds>& bounds, Index count, std::mt19937_64& rng);

struct ObjectiveInput {
  Matrix X;  ///< batch inputs
  Vector y;  ///< batch targets
  /// Required for V42/V43; its first rows must equal X.
  std::optional<MeasurementSet> measurement;
  /// Weight of the functional KL (and trace) terms.
  double lambda = 1.0;
  /// Training-set size for minibatch scaling; 0 means the batch is the full set.
  Index n_total = 0;
};

/// Gradient of an objective with respect to the natural model parameters.
/// L holds d/dL_ij for the lower triangle (not log-transformed); kernel
/// entries are with respect to the packed log-space hyperparameters.
struct BlockGradient {
  Vector a;
  Matrix L;
  Matrix Z;
  Vector kernel;
};

struct ModelGradient {
  std::vector<BlockGradient> blocks;
  double log_sigma2 = 0.0;
  Vector full_prior;

  static ModelGradient zeros_like(const SevgpModel& m);
};

struct ObjectiveTerms {
  double data = 0.0;           ///< scaled expected log-likelihood
  double functional_kl = 0.0;  ///< KL(q(f^D) || p(f^D)), unweighted
  double trace = 0.0;          ///< 0.5 tr(C_D^-1 Sigma_D), unweighted
  double coeff_kl = 0.0;       ///< sum_k KL(q(u_k) || p(u_k))
  double value = 0.0;          ///< the variant's objective
};

/// Evaluates the model's variant objective and, when grad is non-null, its
/// exact gradient.
ObjectiveTerms evaluate_objective(const SevgpModel& m, const ObjectiveInput& in,
                                  ModelGradient* grad = nullptr);

/// Scaled data term minus the coefficient KLs.
double elbo_41(const SevgpModel& m, const Matrix& X, const Vector& y, Index n_total = 0);

/// KL between the finite-dimensional process marginals on a measurement set.
double functional_kl(const GaussianDist& qD, const GaussianDist& pD);

/// Scaled data term minus lambda times KL(q(f^D) || p(f^D)).
double felbo_42(const SevgpModel& m, const Matrix& X, const Vector& y, const MeasurementSet& D,
                double lambda, Index n_total = 0);

/// Scaled data term minus lambda [KL(q(f^D) || p(f^D)) + 0.5 tr(C_D^-1 Sigma_D)]
/// minus the coefficient KLs, where Sigma_D is the covariance of q(f | u).
double felbo_43(const SevgpModel& m, const Matrix& X, const Vector& y, const MeasurementSet& D,
                double lambda, Index n_total = 0);

/// KL(N(a, L L^T) || N(0, prior_chol prior_chol^T)).
double coeff_kl(const Vector& a, const Matrix& L, const Matrix& prior_chol);

}  // namespace sevgp
