#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sevgp/data.hpp"
#include "sevgp/model.hpp"
#include "sevgp/training.hpp"

namespace sevgp {

// ---------------------------------------------------------------------------
// Posterior soundness on the synthetic quadratic.

struct SoundnessConfig {
  std::vector<Index> sizes{25, 100};
  std::vector<Variant> variants{Variant::V41, Variant::V42, Variant::V43};
  Index num_inducing = 4;
  Index augmentation = 20;
  long iterations = 3000;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::Adam;
  std::optional<double> lambda;  ///< nullopt: 1 / N
  std::uint64_t seed = 0;
  long progress_every = 0;
};

/// x in [-2, 2] with step 0.02 (201 points).
Vector soundness_grid();

struct SoundnessRun {
  Index n = 0;
  Variant variant = Variant::V41;
  Vector grid;
  Vector mean;
  Vector sd;  ///< predictive sd of f (noise excluded)
  double rmse_grid = 0.0;
  /// RMSE over grid points outside [min x, max x]; nullopt when the sample
  /// covers the whole grid.
  std::optional<double> rmse_outside;
  double objective_final = 0.0;
};

struct SoundnessResult {
  std::vector<Dataset> samples;  ///< one per size, same order as config.sizes
  std::vector<SoundnessRun> runs;
};

/// Model setup for one soundness fit: const + SE coefficients (a = 0.5
/// fixed, l trainable), polynomial full prior for the functional variants.
ModelOptions soundness_model_options(Variant v, Index num_inducing);

SoundnessResult run_soundness(const SoundnessConfig& config);

/// Files: soundness_grid.csv (n, variant, x, mean, sd, lower, upper,
/// true_mean), soundness_samples.csv (n, x, y), soundness_summary.csv.
void write_soundness(const SoundnessResult& r, const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------------
// Cross-validated benchmark.

struct BenchConfig {
  std::string dataset_name = "dataset";
  Variant variant = Variant::V41;
  Index folds = 10;
  Index num_inducing = 3;
  Index batch_size = 100;
  Index augmentation = 20;
  long iterations = 2000;
  double learning_rate = 1e-2;
  OptimizerKind optimizer = OptimizerKind::RmsProp;
  std::optional<double> lambda;
  KernelSpec coeff_kernel = KernelSpec::sum(
      {KernelSpec::constant(1.0, false), KernelSpec::ard(2.0, {1.0}, false, true)});
  std::optional<KernelSpec> full_prior_kernel;
  Index stability_neighbors = 10;
  std::uint64_t seed = 0;
  /// Folds trained concurrently (each fold is an independent fit).
  unsigned jobs = 1;
  long progress_every = 0;
};

struct FoldResult {
  Index fold = 0;
  double mse = 0.0;  ///< held-out, standardized target units
  double stability = 0.0;
  double elbo_final = 0.0;
  Index stability_short_rows = 0;
};

struct BenchResult {
  std::vector<FoldResult> folds;
  double mse_mean = 0.0;
  double mse_sd = 0.0;
  double stability_mean = 0.0;
  double stability_sd = 0.0;
};

/// k-fold CV: per fold, standardize X and y with training statistics, fit,
/// score held-out MSE and coefficient stability over the training rows.
BenchResult run_bench(const Dataset& data, const BenchConfig& config);

/// CSV with columns dataset, variant, fold, mse, stability, elbo_final, seed;
/// folds first, then "mean" and "sd" rows.
void write_bench(const BenchResult& r, const BenchConfig& config, const std::filesystem::path& file);

}  // namespace sevgp
