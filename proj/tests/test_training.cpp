#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "sevgp/errors.hpp"
#include "sevgp/training.hpp"

using namespace sevgp;
namespace o = sevgp::oracle;

namespace {

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  return std::accumulate(v.begin() + static_cast<long>(from), v.begin() + static_cast<long>(to), 0.0) /
         static_cast<double>(to - from);
}

}  // namespace

TEST(ParamVector, RoundTrip) {
  std::mt19937_64 rng(1);
  SevgpModel m = o::random_model(2, 3, Variant::V43, rng, true);
  m.blocks[1].train_inducing = false;
  const Vector p = pack_params(m);
  EXPECT_EQ(p.size(), num_params(m));
  const SevgpModel back = unpack_params(m, p);
  for (std::size_t k = 0; k < m.blocks.size(); ++k) {
    EXPECT_LE((back.blocks[k].L - m.blocks[k].L).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(back.blocks[k].a, m.blocks[k].a);
    EXPECT_EQ(back.blocks[k].Z, m.blocks[k].Z);
  }
  EXPECT_NEAR(back.sigma2, m.sigma2, 1e-12);
  EXPECT_LE((pack_params(back) - p).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_THROW(unpack_params(m, Vector::Zero(p.size() + 1)), InvalidArgument);
}

TEST(ParamVector, LayoutOrder) {
  std::mt19937_64 rng(2);
  SevgpModel m = o::random_model(1, 2, Variant::V41, rng, false, KernelSpec::sq_exp(2.0, 3.0));
  const Vector p = pack_params(m);
  const auto& b = m.blocks[0];
  // a (2), L lower triangle with log diagonal (3), Z (2), log a, log l, log sigma2.
  ASSERT_EQ(p.size(), 10);
  EXPECT_EQ(p(0), b.a(0));
  EXPECT_EQ(p(2), std::log(b.L(0, 0)));
  EXPECT_EQ(p(3), b.L(1, 0));
  EXPECT_EQ(p(4), std::log(b.L(1, 1)));
  EXPECT_EQ(p(5), b.Z(0, 0));
  EXPECT_EQ(p(7), std::log(2.0));
  EXPECT_EQ(p(8), std::log(3.0));
  EXPECT_EQ(p(9), std::log(m.sigma2));
}

TEST(Gradient, QuadraticObjectiveReturnsP) {
  const QuadraticObjective q(4);
  const Vector p = (Vector(4) << 1.0, -2.0, 0.5, 3.0).finished();
  EXPECT_EQ(gradient(q, p), p);
  EXPECT_THROW(gradient(q, Vector::Zero(3)), InvalidArgument);
}

TEST(Gradient, FrozenParameterHasNoEntry) {
  // Frozen hyperparameters are absent from the flat vector, so the objective
  // is constant along them by construction; a frozen amplitude changes the
  // count but leaves the remaining gradient unaffected.
  std::mt19937_64 rng(3);
  const SevgpModel m = o::random_model(1, 2, Variant::V41, rng, false,
                                       KernelSpec::sum({KernelSpec::constant(1.0, false), KernelSpec::sq_exp(0.5, 1.0, false, true)}));
  EXPECT_EQ(num_params(m), 2 + 3 + 2 + 1 + 1);
}

TEST(Gradient, Elbo41MatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  const SevgpModel m = o::random_model(2, 3, Variant::V41, rng);
  ObjectiveInput in;
  in.X = o::random_inputs(8, 2, rng);
  in.y = o::random_vector(8, rng);
  const SevgpObjective obj(m, in);
  const Vector p = pack_params(m);
  const Vector fd = o::fd_gradient([&](const Vector& q) { return obj.evaluate(q, nullptr); }, p);
  EXPECT_LE(o::max_rel_error(gradient(obj, p), fd), 1e-4);
}

TEST(Gradient, NonFiniteObjectiveThrows) {
  std::mt19937_64 rng(5);
  const SevgpModel m = o::random_model(1, 2, Variant::V41, rng);
  ObjectiveInput in;
  in.X = o::random_inputs(3, 1, rng);
  in.y = Vector::Constant(3, std::numeric_limits<double>::infinity());
  const SevgpObjective obj(m, in);
  EXPECT_THROW(gradient(obj, pack_params(m)), NumericalError);
}

TEST(Optimizers, ZeroGradientLeavesParams) {
  Vector p = Vector::Constant(3, 0.7);
  AdamState a = AdamState::zeros(3);
  adam_step(a, p, Vector::Zero(3), 0.1);
  EXPECT_EQ(p, Vector::Constant(3, 0.7));
  RmsPropState r = RmsPropState::zeros(3);
  rmsprop_step(r, p, Vector::Zero(3), 0.1);
  EXPECT_EQ(p, Vector::Constant(3, 0.7));
}

TEST(Optimizers, FirstAdamStepIsLearningRate) {
  Vector p = Vector::Zero(1);
  AdamState a = AdamState::zeros(1);
  adam_step(a, p, Vector::Ones(1), 0.01);
  EXPECT_NEAR(p(0), 0.01, 1e-9);
}

TEST(Optimizers, ReachConcaveMaximizer) {
  // Maximize -||p - c||^2 / 2; gradient c - p.
  const Vector c = (Vector(3) << 0.5, -0.3, 0.2).finished();
  Vector p = Vector::Zero(3);
  AdamState a = AdamState::zeros(3);
  for (int i = 0; i < 200; ++i) adam_step(a, p, c - p, 0.05);
  EXPECT_LE((p - c).cwiseAbs().maxCoeff(), 1e-3);
  p.setZero();
  RmsPropState r = RmsPropState::zeros(3);
  for (int i = 0; i < 200; ++i) rmsprop_step(r, p, c - p, 0.05 * std::pow(0.97, i));
  EXPECT_LE((p - c).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(Optimizers, DimensionMismatchThrows) {
  Vector p = Vector::Zero(2);
  AdamState a = AdamState::zeros(3);
  EXPECT_THROW(adam_step(a, p, Vector::Zero(2), 0.1), InvalidArgument);
  RmsPropState r = RmsPropState::zeros(2);
  EXPECT_THROW(rmsprop_step(r, p, Vector::Zero(3), 0.1), InvalidArgument);
  EXPECT_EQ(parse_optimizer("RMSProp"), OptimizerKind::RmsProp);
  EXPECT_THROW(parse_optimizer("sgd"), SchemaError);
}

TEST(Fit, ZeroIterationsIsIdentity) {
  const Dataset d = gen_synthetic(20, 1);
  const SevgpModel init = init_model(d.X, ModelOptions{}, 2);
  TrainConfig c;
  c.iterations = 0;
  const FitResult r = fit(init, d, c);
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(model_to_json(r.model), model_to_json(init));
}

TEST(Fit, SyntheticTraceImproves) {
  const Dataset d = gen_synthetic(100, 3);
  const SevgpModel init = init_model(d.X, ModelOptions{}, 4);
  TrainConfig c;
  c.iterations = 2000;
  c.batch_size = 100;
  c.seed = 5;
  const FitResult r = fit(init, d, c);
  ASSERT_EQ(r.trace.size(), 2000u);
  EXPECT_GT(mean_of(r.trace, 1900, 2000), mean_of(r.trace, 0, 100));
  // Positivity holds by parameterization; check it anyway.
  EXPECT_GT(r.model.sigma2, 0.0);
  for (const auto& b : r.model.blocks) EXPECT_GT(b.L.diagonal().minCoeff(), 0.0);
}

TEST(Fit, FullBatchSmallStepIsMonotone) {
  const Dataset d = gen_synthetic(30, 6);
  ModelOptions opt;
  opt.num_inducing = 3;
  const SevgpModel init = init_model(d.X, opt, 7);
  TrainConfig c;
  c.iterations = 300;
  c.learning_rate = 1e-3;
  c.batch_size = d.size();
  const FitResult r = fit(init, d, c);
  for (std::size_t i = 1; i < r.trace.size(); ++i) ASSERT_GE(r.trace[i], r.trace[i - 1] - 1e-8) << i;
}

TEST(Fit, SeededRunsAreBitwiseIdentical) {
  const Dataset d = gen_synthetic(40, 8);
  ModelOptions opt;
  opt.variant = Variant::V42;
  opt.full_prior_kernel = KernelSpec::polynomial(2);
  const SevgpModel init = init_model(d.X, opt, 9);
  TrainConfig c;
  c.iterations = 50;
  c.batch_size = 16;
  c.augmentation = 5;
  c.seed = 10;
  const FitResult a = fit(init, d, c), b = fit(init, d, c);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(model_to_json(a.model), model_to_json(b.model));
  c.seed = 11;
  EXPECT_NE(fit(init, d, c).trace, a.trace);
}

TEST(Fit, RejectsMismatchedData) {
  const Dataset d = gen_synthetic(10, 1);
  std::mt19937_64 rng(1);
  const SevgpModel m = o::random_model(2, 2, Variant::V41, rng);
  EXPECT_THROW(fit(m, d, TrainConfig{}), InvalidArgument);
}

TEST(InitModel, StartsAtPriorWithDistinctSubsets) {
  std::mt19937_64 rng(12);
  const Matrix X = o::random_inputs(30, 3, rng);
  ModelOptions opt;
  opt.num_inducing = 5;
  opt.coeff_kernel = parse_kernel("sum(constant(fixed(1)), ard(theta=fixed(2), l=1))");
  const SevgpModel m = init_model(X, opt, 13);
  ASSERT_EQ(m.num_blocks(), 3);
  for (const auto& b : m.blocks) {
    EXPECT_EQ(b.a, Vector::Zero(5));
    EXPECT_EQ(b.kernel.input_dim(), 3);
    const Matrix K = gram(b.kernel, b.Z, b.Z);
    EXPECT_LE((b.S() - K).cwiseAbs().maxCoeff(), 1e-6);
    for (Index i = 0; i < 5; ++i) {
      bool found = false;
      for (Index r = 0; r < 30; ++r) found = found || X.row(r) == b.Z.row(i);
      EXPECT_TRUE(found);
    }
  }
  EXPECT_NE(m.blocks[0].Z, m.blocks[1].Z);
  opt.num_inducing = 31;
  EXPECT_THROW(init_model(X, opt, 1), InvalidArgument);
}
