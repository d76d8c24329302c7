#include "sevgp/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "sevgp/errors.hpp"

namespace sevgp {
namespace {

constexpr Index kGridSize = 201;

std::ofstream open_out(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out.precision(17);
  return out;
}

std::pair<double, double> mean_sd(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

}  // namespace

Vector soundness_grid() {
  Vector g(kGridSize);
  for (Index i = 0; i < kGridSize; ++i) g(i) = -2.0 + 0.02 * static_cast<double>(i);
  return g;
}

ModelOptions soundness_model_options(Variant v, Index num_inducing) {
  ModelOptions o;
  o.variant = v;
  o.coeff_kernel = KernelSpec::sum(
      {KernelSpec::constant(1.0, false), KernelSpec::sq_exp(0.5, 1.0, false, true)});
  if (v != Variant::V41) o.full_prior_kernel = KernelSpec::polynomial(2);
  o.num_inducing = num_inducing;
  o.include_bias_column = false;
  o.train_inducing = true;
  o.sigma2 = 0.25;
  return o;
}

SoundnessResult run_soundness(const SoundnessConfig& config) {
  SoundnessResult result;
  const Vector grid = soundness_grid();
  const Matrix G = grid;
  for (std::size_t si = 0; si < config.sizes.size(); ++si) {
    const Index n = config.sizes[si];
    const std::uint64_t data_seed = config.seed + 1000 * static_cast<std::uint64_t>(si);
    Dataset d = gen_synthetic(n, data_seed);
    const double lo = d.X.col(0).minCoeff();
    const double hi = d.X.col(0).maxCoeff();
    for (Variant v : config.variants) {
      const SevgpModel init =
          init_model(d.X, soundness_model_options(v, config.num_inducing), data_seed + 1);
      TrainConfig tc;
      tc.optimizer = config.optimizer;
      tc.learning_rate = config.learning_rate;
      tc.iterations = config.iterations;
      tc.batch_size = n;
      tc.augmentation = config.augmentation;
      tc.lambda = config.lambda;
      tc.seed = data_seed + 2;
      tc.progress_every = config.progress_every;
      const FitResult fr = fit(init, d, tc);

      const Marginals mg = predict_f_marginals(fr.model, G);
      SoundnessRun run;
      run.n = n;
      run.variant = v;
      run.grid = grid;
      run.mean = mg.mean;
      run.sd = mg.var.cwiseMax(0.0).cwiseSqrt();
      run.objective_final = fr.trace.empty() ? 0.0 : fr.trace.back();
      double ss = 0.0, ss_out = 0.0;
      Index n_out = 0;
      for (Index i = 0; i < kGridSize; ++i) {
        const double e = run.mean(i) - 0.25 * grid(i) * grid(i);
        ss += e * e;
        if (grid(i) < lo || grid(i) > hi) {
          ss_out += e * e;
          ++n_out;
        }
      }
      run.rmse_grid = std::sqrt(ss / kGridSize);
      if (n_out > 0) run.rmse_outside = std::sqrt(ss_out / static_cast<double>(n_out));
      result.runs.push_back(std::move(run));
    }
    result.samples.push_back(std::move(d));
  }
  return result;
}

void write_soundness(const SoundnessResult& r, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  {
    auto out = open_out(out_dir / "soundness_grid.csv");
    out << "n,variant,x,mean,sd,lower,upper,true_mean\n";
    for (const auto& run : r.runs) {
      for (Index i = 0; i < run.grid.size(); ++i) {
        const double x = run.grid(i);
        out << run.n << ',' << to_string(run.variant) << ',' << x << ',' << run.mean(i) << ','
            << run.sd(i) << ',' << run.mean(i) - 2.0 * run.sd(i) << ','
            << run.mean(i) + 2.0 * run.sd(i) << ',' << 0.25 * x * x << '\n';
      }
    }
  }
  {
    auto out = open_out(out_dir / "soundness_samples.csv");
    out << "n,x,y\n";
    for (const auto& d : r.samples)
      for (Index i = 0; i < d.size(); ++i) out << d.size() << ',' << d.X(i, 0) << ',' << d.y(i) << '\n';
  }
  {
    auto out = open_out(out_dir / "soundness_summary.csv");
    out << "n,variant,rmse_grid,rmse_outside,objective_final\n";
    for (const auto& run : r.runs) {
      out << run.n << ',' << to_string(run.variant) << ',' << run.rmse_grid << ',';
      if (run.rmse_outside) out << *run.rmse_outside;
      out << ',' << run.objective_final << '\n';
    }
  }
}

BenchResult run_bench(const Dataset& data, const BenchConfig& config) {
  validate(data);
  if (config.folds < 2) throw InvalidArgument("bench: need at least two folds");
  const auto folds = kfold(data.size(), config.folds, config.seed);
  std::vector<FoldResult> results(folds.size());

  auto run_fold = [&](std::size_t f) {
    std::vector<Index> train_rows;
    for (std::size_t g = 0; g < folds.size(); ++g)
      if (g != f) train_rows.insert(train_rows.end(), folds[g].begin(), folds[g].end());
    std::sort(train_rows.begin(), train_rows.end());
    const Dataset raw_train = data.subset(train_rows);
    const Dataset train = standardize(raw_train, raw_train);
    const Dataset test = standardize(raw_train, data.subset(folds[f]));

    ModelOptions o;
    o.variant = config.variant;
    o.coeff_kernel = config.coeff_kernel;
    o.full_prior_kernel = config.full_prior_kernel;
    o.num_inducing = config.num_inducing;
    const std::uint64_t fold_seed = config.seed + 7919 * (static_cast<std::uint64_t>(f) + 1);
    const SevgpModel init = init_model(train.X, o, fold_seed);

    TrainConfig tc;
    tc.optimizer = config.optimizer;
    tc.learning_rate = config.learning_rate;
    tc.iterations = config.iterations;
    tc.batch_size = config.batch_size;
    tc.augmentation = config.augmentation;
    tc.lambda = config.lambda;
    tc.seed = fold_seed + 1;
    tc.progress_every = config.progress_every;
    const FitResult fr = fit(init, train, tc);

    FoldResult out;
    out.fold = static_cast<Index>(f);
    out.mse = mse(predict_f_marginals(fr.model, test.X).mean, test.y);
    const StabilityResult st =
        stability(coefficient_means(fr.model, train.X), train.X, config.stability_neighbors);
    out.stability = st.value;
    out.stability_short_rows = st.short_rows;
    out.elbo_final = fr.trace.empty() ? 0.0 : fr.trace.back();
    results[f] = out;
  };

  const unsigned jobs = std::max(1u, std::min<unsigned>(config.jobs, static_cast<unsigned>(folds.size())));
  if (jobs == 1) {
    for (std::size_t f = 0; f < folds.size(); ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < jobs; ++j) {
      pool.emplace_back([&] {
        for (std::size_t f = next++; f < folds.size(); f = next++) {
          try {
            run_fold(f);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }

  BenchResult r;
  r.folds = std::move(results);
  std::vector<double> m, s;
  for (const auto& f : r.folds) {
    m.push_back(f.mse);
    s.push_back(f.stability);
  }
  std::tie(r.mse_mean, r.mse_sd) = mean_sd(m);
  std::tie(r.stability_mean, r.stability_sd) = mean_sd(s);
  return r;
}

void write_bench(const BenchResult& r, const BenchConfig& config, const std::filesystem::path& file) {
  auto out = open_out(file);
  const std::string variant = to_string(config.variant);
  out << "dataset,variant,fold,mse,stability,elbo_final,seed\n";
  for (const auto& f : r.folds) {
    out << config.dataset_name << ',' << variant << ',' << f.fold << ',' << f.mse << ','
        << f.stability << ',' << f.elbo_final << ',' << config.seed << '\n';
  }
  std::vector<double> elbo;
  for (const auto& f : r.folds) elbo.push_back(f.elbo_final);
  const auto [elbo_mean, elbo_sd] = mean_sd(elbo);
  out << config.dataset_name << ',' << variant << ",mean," << r.mse_mean << ',' << r.stability_mean
      << ',' << elbo_mean << ',' << config.seed << '\n';
  out << config.dataset_name << ',' << variant << ",sd," << r.mse_sd << ',' << r.stability_sd << ','
      << elbo_sd << ',' << config.seed << '\n';
}

}  // namespace sevgp
