#include <gtest/gtest.h>

#include <cmath>

#include "sevgp/errors.hpp"
#include "sevgp/experiments.hpp"

using namespace sevgp;

TEST(Soundness, GridDefinition) {
  const Vector g = soundness_grid();
  ASSERT_EQ(g.size(), 201);
  EXPECT_EQ(g(0), -2.0);
  EXPECT_EQ(g(200), 2.0);
  for (Index i = 1; i < g.size(); ++i) EXPECT_NEAR(g(i) - g(i - 1), 0.02, 1e-12);
}

TEST(Soundness, SmallRunReportsConsistentMetrics) {
  SoundnessConfig c;
  c.sizes = {25};
  c.iterations = 30;
  const SoundnessResult r = run_soundness(c);
  ASSERT_EQ(r.samples.size(), 1u);
  ASSERT_EQ(r.runs.size(), 3u);
  const double lo = r.samples[0].X.minCoeff(), hi = r.samples[0].X.maxCoeff();
  for (const auto& run : r.runs) {
    ASSERT_EQ(run.mean.size(), 201);
    double ss = 0.0, ss_out = 0.0;
    int n_out = 0;
    for (Index i = 0; i < 201; ++i) {
      const double x = run.grid(i);
      const double e = run.mean(i) - 0.25 * x * x;
      ss += e * e;
      if (x < lo || x > hi) {
        ss_out += e * e;
        ++n_out;
      }
      EXPECT_GE(run.sd(i), 0.0);
    }
    EXPECT_NEAR(run.rmse_grid, std::sqrt(ss / 201.0), 1e-12);
    ASSERT_EQ(run.rmse_outside.has_value(), n_out > 0);
    if (n_out > 0) EXPECT_NEAR(*run.rmse_outside, std::sqrt(ss_out / n_out), 1e-12);
  }
  // All variants see the same sample.
  EXPECT_EQ(r.runs[0].n, 25);
}

TEST(Soundness, ModelOptionsFollowVariant) {
  const ModelOptions a = soundness_model_options(Variant::V41, 4);
  EXPECT_FALSE(a.full_prior_kernel.has_value());
  EXPECT_EQ(a.num_inducing, 4);
  const ModelOptions b = soundness_model_options(Variant::V42, 4);
  ASSERT_TRUE(b.full_prior_kernel.has_value());
  EXPECT_EQ(format_kernel(*b.full_prior_kernel), format_kernel(KernelSpec::polynomial(2)));
}

TEST(Bench, FoldCountSummaryAndConcurrency) {
  const Dataset d = gen_synthetic(60, 3);
  BenchConfig c;
  c.iterations = 40;
  c.batch_size = 20;
  const BenchResult r = run_bench(d, c);
  ASSERT_EQ(r.folds.size(), 10u);
  double mse = 0.0, stab = 0.0;
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    EXPECT_EQ(r.folds[f].fold, static_cast<Index>(f));
    EXPECT_GE(r.folds[f].mse, 0.0);
    EXPECT_GE(r.folds[f].stability, 0.0);
    mse += r.folds[f].mse;
    stab += r.folds[f].stability;
  }
  EXPECT_NEAR(r.mse_mean, mse / 10.0, 1e-12);
  EXPECT_NEAR(r.stability_mean, stab / 10.0, 1e-12);

  c.jobs = 3;
  const BenchResult p = run_bench(d, c);
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    EXPECT_EQ(p.folds[f].mse, r.folds[f].mse);
    EXPECT_EQ(p.folds[f].stability, r.folds[f].stability);
  }
}

TEST(Bench, RejectsTooManyFolds) {
  BenchConfig c;
  c.folds = 11;
  EXPECT_THROW(run_bench(gen_synthetic(10, 1), c), InvalidArgument);
}
