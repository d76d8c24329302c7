#pragma once

#include "sevgp/kernels.hpp"

namespace sevgp {

inline constexpr double kDefaultJitter = 1e-8;
inline constexpr int kMaxJitterEscalations = 6;

struct CholeskyFactor {
  Matrix lower;   ///< L with L L^T = M + jitter I
  double jitter;  ///< diagonal perturbation that was applied
};

/// Cholesky factor of a symmetric PSD matrix. Adds jitter0 to the diagonal,
/// multiplying it by ten (at most six times) until the factorization
/// succeeds. A zero jitter0 tries the exact matrix first, then escalates from
/// kDefaultJitter. Throws NotPositiveDefinite with an eigenvalue estimate otherwise.
CholeskyFactor cholesky_psd(const Matrix& M, double jitter0 = kDefaultJitter);

/// Solves (L L^T) X = B given the lower factor L.
Matrix chol_solve(const Matrix& lower, const Matrix& B);
Vector chol_solve(const Matrix& lower, const Vector& b);

/// log det(L L^T).
double chol_logdet(const Matrix& lower);

/// Multivariate normal with a cached factor of cov + jitter I.
class GaussianDist {
 public:
  GaussianDist(Vector mean, Matrix cov, double jitter0 = kDefaultJitter);

  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& chol() const { return chol_; }
  double jitter() const { return jitter_; }
  Index dim() const { return mean_.size(); }

  /// log det(cov + jitter I).
  double log_det() const { return chol_logdet(chol_); }

 private:
  Vector mean_;
  Matrix cov_;
  Matrix chol_;
  double jitter_;
};

double mvn_logpdf(const Vector& y, const GaussianDist& d);

/// KL(q || p) between two multivariate normals (jittered covariances).
double kl_mvn(const GaussianDist& q, const GaussianDist& p);

/// sum_i log N(y_i | mean_i, sigma2).
double gauss_loglik(const Vector& y, const Vector& mean, double sigma2);

/// E_{M ~ m}[sum_i log N(y_i | M_i, sigma2)]
///   = sum_i log N(y_i | mu_i, sigma2) - tr(cov) / (2 sigma2).
double expected_gauss_loglik(const Vector& y, const GaussianDist& m, double sigma2);
double expected_gauss_loglik(const Vector& y, const Vector& mean, double cov_trace,
                             double sigma2);

/// Conjugate GP regression posterior over f at Xstar.
GaussianDist exact_gp_posterior(const KernelSpec& k, const Matrix& X, const Vector& y,
                                double sigma2, const Matrix& Xstar);

/// Same posterior for an arbitrary prior covariance: C_NN over the training
/// inputs, C_SN between test and training inputs and C_SS over test inputs.
GaussianDist exact_gp_posterior(const Matrix& C_NN, const Matrix& C_SN, const Matrix& C_SS,
                                const Vector& y, double sigma2);

/// log N(y | 0, C + sigma2 I).
double gp_log_evidence(const Matrix& C, const Vector& y, double sigma2);

}  // namespace sevgp
