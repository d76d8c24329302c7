#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "sevgp/errors.hpp"
#include "sevgp/objectives.hpp"
#include "sevgp/training.hpp"

using namespace sevgp;
namespace o = sevgp::oracle;

namespace {

// Data term written from the definition: per-point Gaussian log-likelihood
// at the predictive mean minus the summed predictive variance.
double data_term_dense(const o::DensePosterior& q, const Vector& y, double sigma2, double scale) {
  double s = 0.0;
  for (Index i = 0; i < y.size(); ++i) {
    const double r = y(i) - q.mean(i);
    s += -0.5 * std::log(2.0 * o::kPi * sigma2) - r * r / (2.0 * sigma2) - q.cov(i, i) / (2.0 * sigma2);
  }
  return scale * s;
}

double coeff_kl_dense(const SevgpModel& m) {
  double kl = 0.0;
  for (std::size_t k = 0; k < m.blocks.size(); ++k) {
    const auto& b = m.blocks[k];
    const Index M = b.Z.rows();
    const Matrix Kp = o::gram_loop(coeff_prior_kernel(m, static_cast<Index>(k)), b.Z, b.Z) +
                      1e-8 * Matrix::Identity(M, M);
    kl += o::kl_dense(b.a, b.L * b.L.transpose(), Vector::Zero(M), Kp);
  }
  return kl;
}

Matrix cond_cov_dense(const SevgpModel& m, const Matrix& X) {
  const Matrix D = o::design_dense(m, X);
  Matrix out = Matrix::Zero(X.rows(), X.rows());
  for (std::size_t k = 0; k < m.blocks.size(); ++k) {
    const auto& b = m.blocks[k];
    const Index M = b.Z.rows();
    const Matrix Kmm = o::gram_loop(b.kernel, b.Z, b.Z) + 1e-8 * Matrix::Identity(M, M);
    const Matrix Knm = o::gram_loop(b.kernel, X, b.Z);
    const Matrix c = o::gram_loop(b.kernel, X, X) - Knm * Kmm.fullPivLu().inverse() * Knm.transpose();
    const Vector xk = D.col(static_cast<Index>(k));
    out += c.cwiseProduct(xk * xk.transpose());
  }
  return out;
}

struct Instance {
  SevgpModel model;
  ObjectiveInput input;
};

Instance make_instance(Variant v, std::uint64_t seed, Index n = 8, Index dim = 2, Index M = 3,
                       Index A = 4, bool bias = false) {
  std::mt19937_64 rng(seed);
  Instance inst{o::random_model(dim, M, v, rng, bias), {}};
  inst.input.X = o::random_inputs(n, dim, rng);
  inst.input.y = o::random_vector(n, rng);
  inst.input.lambda = 0.7;
  inst.input.n_total = 3 * n;
  if (v != Variant::V41) {
    inst.input.measurement = make_measurement_set(inst.input.X, o::random_inputs(A, dim, rng));
  }
  return inst;
}

void expect_gradient_matches(const SevgpModel& m, const ObjectiveInput& in) {
  const SevgpObjective obj(m, in);
  const Vector p = pack_params(m);
  const Vector g = gradient(obj, p);
  const Vector fd = o::fd_gradient([&](const Vector& q) { return obj.evaluate(q, nullptr); }, p);
  EXPECT_LE(o::max_rel_error(g, fd), 1e-4) << "analytic\n" << g.transpose() << "\nfd\n" << fd.transpose();
}

}  // namespace

TEST(Elbo41, MatchesDenseOracle) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto inst = make_instance(Variant::V41, s);
    const auto q = o::predict_f_dense(inst.model, inst.input.X);
    const double expected = data_term_dense(q, inst.input.y, inst.model.sigma2, 3.0) -
                            coeff_kl_dense(inst.model);
    EXPECT_NEAR(elbo_41(inst.model, inst.input.X, inst.input.y, inst.input.n_total), expected,
                1e-7 * std::max(1.0, std::abs(expected)));
  }
}

TEST(Elbo41, ScalarClosedForm) {
  // N = 1, K = 1, M = 1 with kernel constant c: K_MM = c, Lambda = 1,
  // mu = a x, var = (c - (c - s^2)) x^2 = s^2 x^2.
  const double c = 1.7, a = 0.4, s = 0.6, x = 1.3, y = 0.9, sigma2 = 0.5;
  SevgpModel m;
  m.sigma2 = sigma2;
  CoefficientBlock b{Matrix::Constant(1, 1, 0.2), Vector::Constant(1, a), Matrix::Constant(1, 1, s),
                     KernelSpec::constant(c), 0, true};
  m.blocks.push_back(b);
  const double cj = c + 1e-8;
  const double mu = a * x * c / cj;
  const double var = (c - c / cj * (cj - s * s) * c / cj) * x * x;
  const double kl = 0.5 * (std::log(cj / (s * s)) - 1.0 + s * s / cj + a * a / cj);
  const double expected = -0.5 * std::log(2.0 * o::kPi * sigma2) - (y - mu) * (y - mu) / (2.0 * sigma2) -
                          var / (2.0 * sigma2) - kl;
  EXPECT_NEAR(elbo_41(m, Matrix::Constant(1, 1, x), Vector::Constant(1, y)), expected, 1e-12);
}

TEST(Elbo41, PriorInitHasZeroKlAndGpxDataTerm) {
  std::mt19937_64 rng(3);
  const Matrix X = o::random_inputs(10, 2, rng);
  const Vector y = o::random_vector(10, rng);
  ModelOptions opt;
  opt.num_inducing = 4;
  const SevgpModel m = init_model(X, opt, 9);
  const ObjectiveInput in{X, y, std::nullopt, 1.0, 0};
  const ObjectiveTerms t = evaluate_objective(m, in);
  EXPECT_NEAR(t.coeff_kl, 0.0, 1e-8);
  const Matrix C = gpx_prior_cov(m, X);
  const double prior_data = expected_gauss_loglik(y, Vector::Zero(10), C.trace(), m.sigma2);
  EXPECT_NEAR(t.data, prior_data, 1e-6);
}

TEST(Elbo41, BoundedByGpxEvidence) {
  std::mt19937_64 rng(11);
  auto base = make_instance(Variant::V41, 11);
  base.input.n_total = 0;
  const Matrix C = gpx_prior_cov(base.model, base.input.X);
  const double evidence = gp_log_evidence(C, base.input.y, base.model.sigma2);
  for (int draw = 0; draw < 1000; ++draw) {
    SevgpModel m = base.model;
    for (auto& b : m.blocks) {
      b.a = o::random_vector(b.a.size(), rng, 1.5);
      for (Index i = 0; i < b.L.rows(); ++i) {
        for (Index j = 0; j < i; ++j) b.L(i, j) = 0.5 * o::random_vector(1, rng)(0);
        b.L(i, i) = std::exp(o::random_vector(1, rng)(0));
      }
    }
    ASSERT_LE(elbo_41(m, base.input.X, base.input.y), evidence + 1e-9);
  }
}

TEST(Felbo42, MatchesDenseOracle) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto inst = make_instance(Variant::V42, 100 + s);
    const auto& D = *inst.input.measurement;
    const auto qD = o::predict_f_dense(inst.model, D.X);
    const auto qN = o::predict_f_dense(inst.model, inst.input.X);
    const Index nd = D.X.rows();
    const Matrix J = 1e-8 * Matrix::Identity(nd, nd);
    const Matrix C = o::gram_loop(*inst.model.full_prior_kernel, D.X, D.X);
    const double kl = o::kl_dense(qD.mean, qD.cov + J, Vector::Zero(nd), C + J);
    const double expected = data_term_dense(qN, inst.input.y, inst.model.sigma2, 3.0) - 0.7 * kl;
    const double got = felbo_42(inst.model, inst.input.X, inst.input.y, D, 0.7, inst.input.n_total);
    EXPECT_NEAR(got, expected, 1e-6 * std::max(1.0, std::abs(expected)));
  }
}

TEST(Felbo42, LambdaZeroIsDataTerm) {
  const auto inst = make_instance(Variant::V42, 5);
  const auto q = o::predict_f_dense(inst.model, inst.input.X);
  const double expected = data_term_dense(q, inst.input.y, inst.model.sigma2, 3.0);
  EXPECT_NEAR(felbo_42(inst.model, inst.input.X, inst.input.y, *inst.input.measurement, 0.0, 24), expected,
              1e-9 * std::abs(expected));
}

TEST(Felbo42, KlVanishesWhenPosteriorEqualsPrior) {
  // K = 1 on a constant feature: q(f) at prior (a = 0, S = K_MM) has the same
  // covariance as the block kernel, which is also the full prior.
  const KernelSpec k = KernelSpec::sq_exp(1.0, 0.8);
  Matrix Z(3, 1);
  Z << -1.0, 0.0, 1.0;
  const Matrix Kmm = gram(k, Z, Z);
  SevgpModel m;
  m.variant = Variant::V42;
  m.full_prior_kernel = k;
  // With Z spanning all of D, q matches p on D exactly.
  m.blocks.push_back({Z, Vector::Zero(3), cholesky_psd(Kmm).lower, k, 0, true});
  const Matrix X = Matrix::Ones(3, 1);
  const MeasurementSet D = make_measurement_set(X, Matrix(0, 1));
  const ObjectiveInput in{X, Vector::Zero(3), D, 1.0, 0};
  EXPECT_NEAR(evaluate_objective(m, in).functional_kl, 0.0, 1e-6);
}

TEST(Felbo43, MatchesDenseOracle) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto inst = make_instance(Variant::V43, 200 + s);
    const auto& D = *inst.input.measurement;
    const auto qD = o::predict_f_dense(inst.model, D.X);
    const auto qN = o::predict_f_dense(inst.model, inst.input.X);
    const Index nd = D.X.rows();
    const Matrix J = 1e-8 * Matrix::Identity(nd, nd);
    const Matrix C = o::gram_loop(*inst.model.full_prior_kernel, D.X, D.X);
    const double kl = o::kl_dense(qD.mean, qD.cov + J, Vector::Zero(nd), C + J);
    const double tr = 0.5 * ((C + J).fullPivLu().inverse() * cond_cov_dense(inst.model, D.X)).trace();
    const double expected = data_term_dense(qN, inst.input.y, inst.model.sigma2, 3.0) -
                            0.7 * (kl + tr) - coeff_kl_dense(inst.model);
    const double got = felbo_43(inst.model, inst.input.X, inst.input.y, D, 0.7, inst.input.n_total);
    EXPECT_NEAR(got, expected, 1e-6 * std::max(1.0, std::abs(expected)));
  }
}

TEST(Felbo43, CoefficientKlVanishesAtPrior) {
  std::mt19937_64 rng(4);
  const Matrix X = o::random_inputs(6, 2, rng);
  ModelOptions opt;
  opt.variant = Variant::V43;
  opt.full_prior_kernel = KernelSpec::polynomial(2);
  const SevgpModel m = init_model(X, opt, 1);
  const ObjectiveInput in{X, o::random_vector(6, rng), make_measurement_set(X, o::random_inputs(3, 2, rng)), 1.0, 0};
  EXPECT_NEAR(evaluate_objective(m, in).coeff_kl, 0.0, 1e-8);
}

TEST(Felbo43, BoundedByEvidenceOnConjugateToy) {
  // One block with a constant(1) coefficient kernel on x: the coefficient
  // prior induces cov x x^T, which is exactly the poly(1) full prior. A
  // constant process is one random scalar, so a single inducing point.
  std::mt19937_64 rng(12);
  const Index N = 8;
  const Matrix X = o::random_inputs(N, 1, rng);
  const Vector y = o::random_vector(N, rng);
  const Matrix C = o::gram_loop(KernelSpec::polynomial(1), X, X);
  ASSERT_LE((C - X * X.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  const MeasurementSet D = make_measurement_set(X, Matrix(0, 1));
  std::uniform_real_distribution<double> u(0.05, 2.0);
  for (int draw = 0; draw < 1000; ++draw) {
    SevgpModel m;
    m.variant = Variant::V43;
    m.full_prior_kernel = KernelSpec::polynomial(1);
    m.sigma2 = u(rng);
    m.blocks.push_back({o::random_inputs(1, 1, rng), o::random_vector(1, rng, 1.5),
                        Matrix::Constant(1, 1, std::exp(o::random_vector(1, rng)(0))), KernelSpec::constant(1.0, false),
                        0, true});
    ASSERT_LE(felbo_43(m, X, y, D, 1.0), gp_log_evidence(C, y, m.sigma2) + 1e-9) << draw;
  }
}

TEST(Objectives, VariantMismatchThrows) {
  const auto inst = make_instance(Variant::V42, 1);
  EXPECT_THROW(elbo_41(inst.model, inst.input.X, inst.input.y), InvalidArgument);
  EXPECT_THROW(felbo_43(inst.model, inst.input.X, inst.input.y, *inst.input.measurement, 1.0), InvalidArgument);
}

TEST(Objectives, MeasurementSetMustContainBatch) {
  auto inst = make_instance(Variant::V42, 2);
  inst.input.measurement->X(0, 0) += 1.0;
  EXPECT_THROW(evaluate_objective(inst.model, inst.input), InvalidArgument);
}

TEST(Objectives, Deterministic) {
  for (Variant v : {Variant::V41, Variant::V42, Variant::V43}) {
    const auto inst = make_instance(v, 77);
    ModelGradient g1, g2;
    const double a = evaluate_objective(inst.model, inst.input, &g1).value;
    const double b = evaluate_objective(inst.model, inst.input, &g2).value;
    EXPECT_EQ(a, b);
    EXPECT_EQ(pack_gradient(inst.model, g1), pack_gradient(inst.model, g2));
  }
}

class GradientCheck : public ::testing::TestWithParam<Variant> {};

TEST_P(GradientCheck, RandomPoints) {
  for (std::uint64_t s = 0; s < 6; ++s) {
    const auto inst = make_instance(GetParam(), 300 + s);
    expect_gradient_matches(inst.model, inst.input);
  }
}

TEST_P(GradientCheck, BiasColumnArdAndFrozenInducing) {
  std::mt19937_64 rng(42);
  const KernelSpec ard = KernelSpec::sum({KernelSpec::constant(0.5, false), KernelSpec::ard(1.3, {0.9, 1.4})});
  SevgpModel m = o::random_model(2, 3, GetParam(), rng, true, ard);
  m.blocks[1].train_inducing = false;
  ObjectiveInput in;
  in.X = o::random_inputs(7, 2, rng);
  in.y = o::random_vector(7, rng);
  in.lambda = 1.3;
  if (GetParam() != Variant::V41) in.measurement = make_measurement_set(in.X, o::random_inputs(5, 2, rng));
  expect_gradient_matches(m, in);
}

TEST_P(GradientCheck, UntiedCoefficientPriors) {
  auto inst = make_instance(GetParam(), 55);
  inst.model.coeff_prior_kernels.assign(inst.model.blocks.size(), KernelSpec::sq_exp(0.9, 1.2));
  expect_gradient_matches(inst.model, inst.input);
}

INSTANTIATE_TEST_SUITE_P(Variants, GradientCheck,
                         ::testing::Values(Variant::V41, Variant::V42, Variant::V43),
                         [](const auto& info) { return "V" + std::to_string(41 + static_cast<int>(info.param)); });

TEST(CoeffKl, MatchesDenseAndIsNonnegative) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    const Index M = 1 + t % 5;
    Matrix R = Matrix::Random(M, M);
    const Matrix Kp = R * R.transpose() + 0.5 * Matrix::Identity(M, M);
    Matrix L = Matrix::Random(M, M).triangularView<Eigen::Lower>();
    L.diagonal() = L.diagonal().cwiseAbs().array() + 0.1;
    const Vector a = o::random_vector(M, rng);
    const double got = coeff_kl(a, L, o::cholesky_textbook(Kp));
    EXPECT_NEAR(got, o::kl_dense(a, L * L.transpose(), Vector::Zero(M), Kp), 1e-9);
    EXPECT_GE(got, -1e-10);
  }
}

TEST(SampleAugmentation, EmptyDegenerateAndUniformMean) {
  const std::vector<Bounds> b{{-1.0, 3.0}, {0.0, 1e-9}};
  EXPECT_EQ(sample_augmentation(b, 0, 1).rows(), 0);
  const Matrix A = sample_augmentation(b, 100000, 5);
  EXPECT_NEAR(A.col(1).maxCoeff(), 0.0, 1e-9);
  const double se = 4.0 / std::sqrt(12.0 * 100000.0);
  EXPECT_NEAR(A.col(0).mean(), 1.0, 3.0 * se);
  EXPECT_GE(A.col(0).minCoeff(), -1.0);
  EXPECT_LE(A.col(0).maxCoeff(), 3.0);
  EXPECT_EQ(sample_augmentation(b, 10, 5), sample_augmentation(b, 10, 5));
  EXPECT_THROW(sample_augmentation({{1.0, 1.0}}, 3, 1), InvalidArgument);
}

// E_u KL(q(f^D | u) || p(f^D)) = KL(q(f^D) || p(f^D)) + 0.5 log(|Sigma_marg| / |Sigma_cond|),
// because q(f^D) mixes q(f^D | u) over u with a u-independent conditional
// covariance. Checked by Monte Carlo on the same shape the acceptance suite uses.
TEST(ConditionalKl, ExpectationIsMarginalKlPlusLogDetRatio) {
  std::mt19937_64 rng(9);
  const SevgpModel m = o::random_model(2, 4, Variant::V43, rng);
  const Matrix D = o::random_inputs(12, 2, rng);
  const Matrix J = kDefaultJitter * Matrix::Identity(12, 12);
  const GaussianDist qD = predict_f(m, D);
  const Matrix C = o::gram_loop(*m.full_prior_kernel, D, D);
  const GaussianDist pD(Vector::Zero(12), C);
  const Matrix cond = conditional_f_given_inducing(m, D, std::vector<Vector>{m.blocks[0].a, m.blocks[1].a}).cov();
  const double expected = o::kl_dense(qD.mean(), qD.cov() + J, Vector::Zero(12), C + J) +
                          0.5 * (o::logdet_lu(qD.cov() + J) - o::logdet_lu(cond + J));
  const int draws = 20000;
  double sum = 0.0, sum2 = 0.0;
  for (int s = 0; s < draws; ++s) {
    std::vector<Vector> u;
    for (const auto& b : m.blocks) u.push_back(o::draw(b.a, b.L, rng));
    const GaussianDist c = conditional_f_given_inducing(m, D, u);
    const double kl = o::kl_dense(c.mean(), cond + J, Vector::Zero(12), C + J);
    sum += kl;
    sum2 += kl * kl;
  }
  const double mean = sum / draws, se = std::sqrt((sum2 / draws - mean * mean) / draws);
  EXPECT_NEAR(mean, expected, 3.0 * se);
}
