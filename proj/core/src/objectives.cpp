#include "sevgp/objectives.hpp"

#include <cmath>

#include "sevgp/errors.hpp"

namespace sevgp {
namespace {

// Forward quantities of one coefficient block on the evaluation points P.
//   Kmm_j = K_MM + jitter I,  Pinv = Kmm_j^-1,  A = Pinv a,
//   W = Pinv - Pinv S Pinv,
//   mean = K_PM A,  cov = K_PP - K_PM W K_MP,  cond = K_PP - K_PM Pinv K_MP.
struct BlockCache {
  CholeskyFactor kmm;
  Matrix Kpm;
  Matrix Pinv;
  Matrix S;
  Vector A;
  Matrix W;
  Matrix KpmW;
  Vector mean;
  Matrix cov;   // full mode
  Matrix cond;  // full mode, V43 only
  Vector var;   // diagonal mode
};

BlockCache forward_block(const CoefficientBlock& b, const Matrix& P, bool full, bool need_cond) {
  BlockCache c;
  const Index M = b.num_inducing();
  c.kmm = cholesky_psd(gram(b.kernel, b.Z, b.Z));
  c.Kpm = gram(b.kernel, P, b.Z);
  c.Pinv = chol_solve(c.kmm.lower, Matrix::Identity(M, M).eval());
  c.Pinv = 0.5 * (c.Pinv + c.Pinv.transpose()).eval();
  c.S = b.L * b.L.transpose();
  c.A = c.Pinv * b.a;
  c.W = c.Pinv - c.Pinv * c.S * c.Pinv;
  c.KpmW = c.Kpm * c.W;
  c.mean = c.Kpm * c.A;
  if (full) {
    const Matrix Kpp = gram(b.kernel, P, P);
    c.cov = Kpp - c.KpmW * c.Kpm.transpose();
    c.cov = 0.5 * (c.cov + c.cov.transpose()).eval();
    if (need_cond) {
      c.cond = Kpp - c.Kpm * c.Pinv * c.Kpm.transpose();
      c.cond = 0.5 * (c.cond + c.cond.transpose()).eval();
    }
  } else {
    c.var = gram_diag(b.kernel, P) - (c.KpmW.array() * c.Kpm.array()).rowwise().sum().matrix();
  }
  return c;
}

struct BlockAdjoint {
  Vector mean;
  Matrix cov;   // full mode
  Matrix cond;  // full mode, may be empty
  Vector var;   // diagonal mode
  Vector a;     // direct contributions (coefficient KL)
  Matrix L;
  Matrix Kmm;   // direct contributions to the K_MM adjoint (tied prior KL)
};

void backward_block(const CoefficientBlock& b, const Matrix& P, const BlockCache& c,
                    const BlockAdjoint& adj, bool full, BlockGradient& g) {
  const Index M = b.num_inducing();
  Matrix Pbar = Matrix::Zero(M, M);
  Matrix Sbar = Matrix::Zero(M, M);
  Matrix Kpm_bar = adj.mean * c.A.transpose();
  const Vector Abar = c.Kpm.transpose() * adj.mean;
  g.a += c.Pinv * Abar;
  Pbar += Abar * b.a.transpose();

  Matrix Wbar;
  if (full) {
    Kpm_bar -= 2.0 * adj.cov * c.KpmW;
    Wbar = -c.Kpm.transpose() * adj.cov * c.Kpm;
  } else {
    Kpm_bar -= 2.0 * adj.var.asDiagonal() * c.KpmW;
    Wbar = -c.Kpm.transpose() * adj.var.asDiagonal() * c.Kpm;
  }
  Wbar = 0.5 * (Wbar + Wbar.transpose()).eval();
  const Matrix PinvS = c.Pinv * c.S;
  Pbar += Wbar - Wbar * PinvS - PinvS.transpose() * Wbar;
  Sbar -= c.Pinv * Wbar * c.Pinv;

  if (full && adj.cond.size() > 0) {
    Kpm_bar -= 2.0 * adj.cond * c.Kpm * c.Pinv;
    Pbar -= c.Kpm.transpose() * adj.cond * c.Kpm;
  }

  Matrix Kmm_bar = -c.Pinv * Pbar * c.Pinv;
  if (adj.Kmm.size() > 0) Kmm_bar += adj.Kmm;
  if (adj.a.size() > 0) g.a += adj.a;

  Matrix Lbar = (Sbar + Sbar.transpose()) * b.L;
  if (adj.L.size() > 0) Lbar += adj.L;
  g.L += Lbar.triangularView<Eigen::Lower>().toDenseMatrix();

  Matrix* dZ = b.train_inducing ? &g.Z : nullptr;
  gram_backward(b.kernel, b.Z, b.Z, Kmm_bar, dZ, dZ, g.kernel);
  gram_backward(b.kernel, P, b.Z, Kpm_bar, nullptr, dZ, g.kernel);
  if (full) {
    Matrix Kpp_bar = adj.cov;
    if (adj.cond.size() > 0) Kpp_bar += adj.cond;
    gram_backward(b.kernel, P, P, Kpp_bar, nullptr, nullptr, g.kernel);
  } else {
    gram_diag_backward(b.kernel, P, adj.var, g.kernel);
  }
}

// KL(N(a, L L^T) || N(0, Lp Lp^T)) and, optionally, its gradients with
// respect to a, L and Kp = Lp Lp^T.
double coeff_kl_impl(const Vector& a, const Matrix& L, const Matrix& Lp, Vector* da, Matrix* dL,
                     Matrix* dKp) {
  const Index M = a.size();
  const auto Lpt = Lp.triangularView<Eigen::Lower>();
  const Matrix B = Lpt.solve(L);
  const Vector z = Lpt.solve(a);
  const double kl = 0.5 * (chol_logdet(Lp) - 2.0 * L.diagonal().array().log().sum() -
                           static_cast<double>(M) + B.squaredNorm() + z.squaredNorm());
  if (da || dL || dKp) {
    const Matrix Kpinv = chol_solve(Lp, Matrix::Identity(M, M).eval());
    const Vector Kpinv_a = Kpinv * a;
    if (da) *da = Kpinv_a;
    if (dL) {
      Matrix g = Kpinv * L;
      g.diagonal().array() -= L.diagonal().array().inverse();
      *dL = g.triangularView<Eigen::Lower>();
    }
    if (dKp) {
      const Matrix KpinvL = Kpinv * L;
      *dKp = 0.5 * (Kpinv - KpinvL * KpinvL.transpose() - Kpinv_a * Kpinv_a.transpose());
    }
  }
  return kl;
}

void check_input(const SevgpModel& m, const ObjectiveInput& in) {
  if (in.X.rows() < 1) throw InvalidArgument("objective: empty batch");
  if (in.X.cols() != m.input_dim()) throw InvalidArgument("objective: input dimension mismatch");
  if (in.y.size() != in.X.rows()) throw InvalidArgument("objective: target length mismatch");
  if (!(m.sigma2 > 0.0)) throw InvalidArgument("objective: sigma2 must be positive");
  if (in.n_total != 0 && in.n_total < in.X.rows()) {
    throw InvalidArgument("objective: n_total smaller than the batch");
  }
  if (m.variant == Variant::V41) return;
  if (!m.full_prior_kernel) {
    throw InvalidArgument("variant " + to_string(m.variant) + " needs a full-process prior kernel");
  }
  if (!in.measurement) {
    throw InvalidArgument("variant " + to_string(m.variant) + " needs a measurement set");
  }
  const auto& D = *in.measurement;
  if (D.n_train != in.X.rows() || D.X.rows() < D.n_train || D.X.cols() != in.X.cols() ||
      D.X.topRows(D.n_train) != in.X) {
    throw InvalidArgument("measurement set must start with the batch inputs");
  }
  if (!(in.lambda >= 0.0)) throw InvalidArgument("objective: lambda must be nonnegative");
}

}  // namespace

ModelGradient ModelGradient::zeros_like(const SevgpModel& m) {
  ModelGradient g;
  for (const auto& b : m.blocks) {
    const Index M = b.num_inducing();
    g.blocks.push_back({Vector::Zero(M), Matrix::Zero(M, M),
                        Matrix::Zero(b.Z.rows(), b.Z.cols()), Vector::Zero(b.kernel.num_params())});
  }
  g.full_prior = Vector::Zero(m.full_prior_kernel ? m.full_prior_kernel->num_params() : 0);
  return g;
}

MeasurementSet make_measurement_set(const Matrix& batch, const Matrix& augmentation) {
  if (augmentation.rows() > 0 && augmentation.cols() != batch.cols()) {
    throw InvalidArgument("augmentation points have the wrong dimension");
  }
  MeasurementSet D;
  D.n_train = batch.rows();
  D.X.resize(batch.rows() + augmentation.rows(), batch.cols());
  D.X.topRows(batch.rows()) = batch;
  if (augmentation.rows() > 0) D.X.bottomRows(augmentation.rows()) = augmentation;
  return D;
}

Matrix sample_augmentation(const std::vector<Bounds>& bounds, Index count, std::mt19937_64& rng) {
  if (count < 0) throw InvalidArgument("sample_augmentation: negative count");
  for (const auto& [lo, hi] : bounds) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) {
      throw InvalidArgument("sample_augmentation: bounds need lo < hi");
    }
  }
  const Index dim = static_cast<Index>(bounds.size());
  Matrix A(count, dim);
  for (Index i = 0; i < count; ++i) {
    for (Index d = 0; d < dim; ++d) {
      const auto& [lo, hi] = bounds[static_cast<std::size_t>(d)];
      A(i, d) = std::uniform_real_distribution<double>(lo, hi)(rng);
    }
  }
  return A;
}

Matrix sample_augmentation(const std::vector<Bounds>& bounds, Index count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_augmentation(bounds, count, rng);
}

double coeff_kl(const Vector& a, const Matrix& L, const Matrix& prior_chol) {
  if (a.size() != L.rows() || L.rows() != prior_chol.rows()) {
    throw InvalidArgument("coeff_kl: dimension mismatch");
  }
  return coeff_kl_impl(a, L, prior_chol, nullptr, nullptr, nullptr);
}

ObjectiveTerms evaluate_objective(const SevgpModel& m, const ObjectiveInput& in,
                                  ModelGradient* grad) {
  validate(m);
  check_input(m, in);
  const bool functional = m.variant != Variant::V41;
  const bool need_cond = m.variant == Variant::V43;
  const bool coeff_priors = m.variant != Variant::V42;
  const Matrix& P = functional ? in.measurement->X : in.X;
  const Index n = in.X.rows();
  const Index np = P.rows();
  const Matrix design = design_matrix(m, P);
  const double sigma2 = m.sigma2;
  const double scale = in.n_total > 0 ? static_cast<double>(in.n_total) / static_cast<double>(n) : 1.0;

  // Compose q(f) (and q(f | u) covariance) on P.
  std::vector<BlockCache> caches;
  caches.reserve(m.blocks.size());
  Vector mean = Vector::Zero(np);
  Matrix cov, cond;
  Vector var;
  if (functional) {
    cov = Matrix::Zero(np, np);
    if (need_cond) cond = Matrix::Zero(np, np);
  } else {
    var = Vector::Zero(np);
  }
  for (const auto& b : m.blocks) {
    caches.push_back(forward_block(b, P, functional, need_cond));
    const BlockCache& c = caches.back();
    const auto xk = design.col(b.feature_index);
    mean.array() += c.mean.array() * xk.array();
    if (functional) {
      const Matrix outer = xk * xk.transpose();
      cov.array() += c.cov.array() * outer.array();
      if (need_cond) cond.array() += c.cond.array() * outer.array();
    } else {
      var.array() += c.var.array() * xk.array().square();
    }
  }

  ObjectiveTerms terms;
  const Vector batch_mean = mean.head(n);
  const double batch_trace = functional ? cov.diagonal().head(n).sum() : var.sum();
  const Vector resid = in.y - batch_mean;
  terms.data = scale * expected_gauss_loglik(in.y, batch_mean, batch_trace, sigma2);

  Vector mean_bar, var_bar;
  Matrix cov_bar, cond_bar, C_bar;
  if (grad) {
    *grad = ModelGradient::zeros_like(m);
    mean_bar = Vector::Zero(np);
    mean_bar.head(n) = scale * resid / sigma2;
    grad->log_sigma2 = scale * (-0.5 * static_cast<double>(n) +
                                (resid.squaredNorm() + batch_trace) / (2.0 * sigma2));
    if (functional) {
      cov_bar = Matrix::Zero(np, np);
      cov_bar.diagonal().head(n).setConstant(-scale / (2.0 * sigma2));
    } else {
      var_bar = Vector::Constant(np, -scale / (2.0 * sigma2));
    }
  }

  if (functional) {
    const Matrix C = gram(*m.full_prior_kernel, P, P);
    const GaussianDist qD(mean, cov);
    const GaussianDist pD(Vector::Zero(np), C);
    terms.functional_kl = functional_kl(qD, pD);
    Matrix Cinv;
    if (grad || need_cond) Cinv = chol_solve(pD.chol(), Matrix::Identity(np, np).eval());
    if (need_cond) terms.trace = 0.5 * (Cinv.array() * cond.array()).sum();
    if (grad) {
      const double lam = in.lambda;
      const Matrix Qinv = chol_solve(qD.chol(), Matrix::Identity(np, np).eval());
      const Vector Cinv_mean = Cinv * mean;
      mean_bar -= lam * Cinv_mean;
      cov_bar -= lam * 0.5 * (Cinv - Qinv);
      Matrix Qj = qD.cov();
      Qj.diagonal().array() += qD.jitter();
      C_bar = -lam * 0.5 * (Cinv - Cinv * Qj * Cinv - Cinv_mean * Cinv_mean.transpose());
      if (need_cond) {
        cond_bar = -lam * 0.5 * Cinv;
        C_bar += lam * 0.5 * Cinv * cond * Cinv;
      }
      gram_backward(*m.full_prior_kernel, P, P, C_bar, nullptr, nullptr, grad->full_prior);
    }
  }

  std::vector<BlockAdjoint> adjs(m.blocks.size());
  if (coeff_priors) {
    for (std::size_t k = 0; k < m.blocks.size(); ++k) {
      const auto& b = m.blocks[k];
      const bool tied = m.tied_coeff_priors();
      CholeskyFactor prior = tied ? caches[k].kmm
                                  : cholesky_psd(gram(m.coeff_prior_kernels[k], b.Z, b.Z));
      BlockAdjoint& adj = adjs[k];
      Vector da;
      Matrix dL, dKp;
      const bool need_dKp = grad && (tied || b.train_inducing);
      terms.coeff_kl += coeff_kl_impl(b.a, b.L, prior.lower, grad ? &da : nullptr,
                                      grad ? &dL : nullptr, need_dKp ? &dKp : nullptr);
      if (grad) {
        adj.a = -da;
        adj.L = -dL;
        if (tied) {
          adj.Kmm = -dKp;
        } else if (b.train_inducing) {
          // The untied prior kernel is fixed, but its Gram still moves with Z.
          Vector unused = Vector::Zero(m.coeff_prior_kernels[k].num_params());
          gram_backward(m.coeff_prior_kernels[k], b.Z, b.Z, -dKp, &grad->blocks[k].Z,
                        &grad->blocks[k].Z, unused);
        }
      }
    }
  }

  switch (m.variant) {
    case Variant::V41: terms.value = terms.data - terms.coeff_kl; break;
    case Variant::V42: terms.value = terms.data - in.lambda * terms.functional_kl; break;
    case Variant::V43:
      terms.value = terms.data - in.lambda * (terms.functional_kl + terms.trace) - terms.coeff_kl;
      break;
  }

  if (grad) {
    for (std::size_t k = 0; k < m.blocks.size(); ++k) {
      const auto& b = m.blocks[k];
      const auto xk = design.col(b.feature_index);
      BlockAdjoint& adj = adjs[k];
      adj.mean = mean_bar.array() * xk.array();
      if (functional) {
        const Matrix outer = xk * xk.transpose();
        adj.cov = cov_bar.array() * outer.array();
        if (need_cond) adj.cond = cond_bar.array() * outer.array();
      } else {
        adj.var = var_bar.array() * xk.array().square();
      }
      backward_block(b, P, caches[k], adj, functional, grad->blocks[k]);
    }
  }
  return terms;
}

double elbo_41(const SevgpModel& m, const Matrix& X, const Vector& y, Index n_total) {
  if (m.variant != Variant::V41) throw InvalidArgument("elbo_41 needs a variant-4.1 model");
  ObjectiveInput in{X, y, std::nullopt, 1.0, n_total};
  return evaluate_objective(m, in).value;
}

double functional_kl(const GaussianDist& qD, const GaussianDist& pD) { return kl_mvn(qD, pD); }

double felbo_42(const SevgpModel& m, const Matrix& X, const Vector& y, const MeasurementSet& D,
                double lambda, Index n_total) {
  if (m.variant != Variant::V42) throw InvalidArgument("felbo_42 needs a variant-4.2 model");
  ObjectiveInput in{X, y, D, lambda, n_total};
  return evaluate_objective(m, in).value;
}

double felbo_43(const SevgpModel& m, const Matrix& X, const Vector& y, const MeasurementSet& D,
                double lambda, Index n_total) {
  if (m.variant != Variant::V43) throw InvalidArgument("felbo_43 needs a variant-4.3 model");
  ObjectiveInput in{X, y, D, lambda, n_total};
  return evaluate_objective(m, in).value;
}

}  // namespace sevgp
