#include "sevgp/gaussian.hpp"

#include <cmath>
#include <numbers>

#include "sevgp/errors.hpp"

namespace sevgp {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

void require_square(const Matrix& M, const char* what) {
  if (M.rows() != M.cols()) throw InvalidArgument(std::string(what) + ": matrix is not square");
}

void require_symmetric(const Matrix& M, const char* what) {
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw InvalidArgument(std::string(what) + ": matrix is not symmetric");
  }
}

}  // namespace

CholeskyFactor cholesky_psd(const Matrix& M, double jitter0) {
  require_square(M, "cholesky_psd");
  require_symmetric(M, "cholesky_psd");
  if (!(jitter0 >= 0.0)) throw InvalidArgument("cholesky_psd: jitter must be nonnegative");
  if (!M.allFinite()) {
    throw NotPositiveDefinite("cholesky_psd: matrix has non-finite entries",
                              std::numeric_limits<double>::quiet_NaN());
  }
  const Index n = M.rows();
  double jitter = jitter0;
  for (int attempt = 0; attempt <= kMaxJitterEscalations; ++attempt) {
    Matrix A = M;
    A.diagonal().array() += jitter;
    Eigen::LLT<Matrix> llt(A);
    if (llt.info() == Eigen::Success) {
      Matrix L = llt.matrixL();
      if (L.allFinite()) return {std::move(L), jitter};
    }
    jitter = jitter > 0.0 ? 10.0 * jitter : kDefaultJitter;
  }
  const double min_eig = n > 0 ? Eigen::SelfAdjointEigenSolver<Matrix>(M, Eigen::EigenvaluesOnly)
                                     .eigenvalues()
                                     .minCoeff()
                               : 0.0;
  throw NotPositiveDefinite("cholesky_psd: factorization failed after jitter escalation (min "
                            "eigenvalue " + std::to_string(min_eig) + ")",
                            min_eig);
}

Matrix chol_solve(const Matrix& lower, const Matrix& B) {
  Matrix X = lower.triangularView<Eigen::Lower>().solve(B);
  lower.triangularView<Eigen::Lower>().transpose().solveInPlace(X);
  return X;
}

Vector chol_solve(const Matrix& lower, const Vector& b) {
  Vector x = lower.triangularView<Eigen::Lower>().solve(b);
  lower.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
  return x;
}

double chol_logdet(const Matrix& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

GaussianDist::GaussianDist(Vector mean, Matrix cov, double jitter0)
    : mean_(std::move(mean)), cov_(std::move(cov)) {
  require_square(cov_, "GaussianDist");
  if (cov_.rows() != mean_.size()) {
    throw InvalidArgument("GaussianDist: mean has " + std::to_string(mean_.size()) +
                          " entries but covariance is " + std::to_string(cov_.rows()) + "x" +
                          std::to_string(cov_.cols()));
  }
  require_symmetric(cov_, "GaussianDist");
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
  auto f = cholesky_psd(cov_, jitter0);
  chol_ = std::move(f.lower);
  jitter_ = f.jitter;
}

double mvn_logpdf(const Vector& y, const GaussianDist& d) {
  if (y.size() != d.dim()) throw InvalidArgument("mvn_logpdf: dimension mismatch");
  const Vector z = d.chol().triangularView<Eigen::Lower>().solve(y - d.mean());
  return -0.5 * (static_cast<double>(d.dim()) * kLog2Pi + d.log_det() + z.squaredNorm());
}

double kl_mvn(const GaussianDist& q, const GaussianDist& p) {
  if (q.dim() != p.dim()) throw InvalidArgument("kl_mvn: dimension mismatch");
  const auto& Lp = p.chol().triangularView<Eigen::Lower>();
  // tr(C_p^-1 C_q) = |L_p^-1 L_q|_F^2
  const Matrix A = Lp.solve(q.chol());
  const Vector z = Lp.solve(p.mean() - q.mean());
  const double n = static_cast<double>(q.dim());
  return 0.5 * (p.log_det() - q.log_det() - n + A.squaredNorm() + z.squaredNorm());
}

double gauss_loglik(const Vector& y, const Vector& mean, double sigma2) {
  if (y.size() != mean.size()) throw InvalidArgument("gauss_loglik: dimension mismatch");
  if (!(sigma2 > 0.0)) throw InvalidArgument("gauss_loglik: sigma2 must be positive");
  const double n = static_cast<double>(y.size());
  return -0.5 * n * (kLog2Pi + std::log(sigma2)) - 0.5 * (y - mean).squaredNorm() / sigma2;
}

double expected_gauss_loglik(const Vector& y, const Vector& mean, double cov_trace,
                             double sigma2) {
  return gauss_loglik(y, mean, sigma2) - cov_trace / (2.0 * sigma2);
}

double expected_gauss_loglik(const Vector& y, const GaussianDist& m, double sigma2) {
  if (y.size() != m.dim()) throw InvalidArgument("expected_gauss_loglik: dimension mismatch");
  return expected_gauss_loglik(y, m.mean(), m.cov().trace(), sigma2);
}

GaussianDist exact_gp_posterior(const Matrix& C_NN, const Matrix& C_SN, const Matrix& C_SS,
                                const Vector& y, double sigma2) {
  if (C_NN.rows() < 1) throw InvalidArgument("exact_gp_posterior: need at least one observation");
  if (!(sigma2 > 0.0)) throw InvalidArgument("exact_gp_posterior: sigma2 must be positive");
  if (C_NN.rows() != y.size() || C_SN.cols() != y.size() || C_SS.rows() != C_SN.rows()) {
    throw InvalidArgument("exact_gp_posterior: dimension mismatch");
  }
  Matrix Kn = C_NN;
  Kn.diagonal().array() += sigma2;
  // sigma2 > 0 already regularizes; jitter only on failure.
  const auto f = cholesky_psd(Kn, 0.0);
  const auto& L = f.lower.triangularView<Eigen::Lower>();
  const Vector alpha = chol_solve(f.lower, y);
  const Matrix V = L.solve(C_SN.transpose());
  Matrix cov = C_SS - V.transpose() * V;
  cov = 0.5 * (cov + cov.transpose()).eval();
  return GaussianDist(C_SN * alpha, std::move(cov));
}

GaussianDist exact_gp_posterior(const KernelSpec& k, const Matrix& X, const Vector& y,
                                double sigma2, const Matrix& Xstar) {
  return exact_gp_posterior(gram(k, X, X), gram(k, Xstar, X), gram(k, Xstar, Xstar), y, sigma2);
}

double gp_log_evidence(const Matrix& C, const Vector& y, double sigma2) {
  require_square(C, "gp_log_evidence");
  if (C.rows() != y.size()) throw InvalidArgument("gp_log_evidence: dimension mismatch");
  if (!(sigma2 > 0.0)) throw InvalidArgument("gp_log_evidence: sigma2 must be positive");
  Matrix A = C;
  A.diagonal().array() += sigma2;
  return mvn_logpdf(y, GaussianDist(Vector::Zero(y.size()), std::move(A), 0.0));
}

}  // namespace sevgp
