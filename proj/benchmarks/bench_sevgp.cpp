#include <benchmark/benchmark.h>

#include <random>

#include "sevgp/data.hpp"
#include "sevgp/kernels.hpp"
#include "sevgp/objectives.hpp"
#include "sevgp/training.hpp"

using namespace sevgp;

namespace {

Matrix inputs(Index n, Index d) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  Matrix X(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) X(i, j) = z(rng);
  return X;
}

Variant variant_arg(int v) { return v == 41 ? Variant::V41 : v == 42 ? Variant::V42 : Variant::V43; }

}  // namespace

static void BM_GramArd(benchmark::State& state) {
  const Index n = state.range(0);
  const Matrix X = inputs(n, 8);
  const KernelSpec k = broadcast_to_dim(parse_kernel("ard(theta=1, l=1)"), 8);
  for (auto _ : state) benchmark::DoNotOptimize(gram(k, X, X));
  state.SetComplexityN(n);
}
BENCHMARK(BM_GramArd)->RangeMultiplier(2)->Range(32, 512)->Complexity(benchmark::oNSquared);

static void BM_ObjectiveAndGradient(benchmark::State& state) {
  const Variant v = variant_arg(static_cast<int>(state.range(0)));
  const Index n = 100, d = 5;
  const Matrix X = inputs(n, d);
  const Vector y = X.rowwise().sum();
  ModelOptions opt;
  opt.variant = v;
  opt.num_inducing = 10;
  if (v != Variant::V41) opt.full_prior_kernel = parse_kernel("se(a=1, l=2)");
  const SevgpModel m = init_model(X, opt, 0);
  ObjectiveInput in{X, y, std::nullopt, 1.0 / n, 0};
  if (v != Variant::V41) in.measurement = make_measurement_set(X, inputs(20, d));
  const SevgpObjective obj(m, in);
  const Vector p = pack_params(m);
  Vector g;
  for (auto _ : state) benchmark::DoNotOptimize(obj.evaluate(p, &g));
}
BENCHMARK(BM_ObjectiveAndGradient)->Arg(41)->Arg(42)->Arg(43)->Unit(benchmark::kMillisecond);

static void BM_FitSteps(benchmark::State& state) {
  const Dataset data = gen_synthetic(200, 4);
  ModelOptions opt;
  opt.num_inducing = 8;
  const SevgpModel m = init_model(data.X, opt, 0);
  TrainConfig tc;
  tc.iterations = 10;
  tc.batch_size = 50;
  for (auto _ : state) benchmark::DoNotOptimize(fit(m, data, tc));
}
BENCHMARK(BM_FitSteps)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
