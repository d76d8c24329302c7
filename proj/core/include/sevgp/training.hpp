#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "sevgp/data.hpp"
#include "sevgp/model.hpp"
#include "sevgp/objectives.hpp"

namespace sevgp {

// ---------------------------------------------------------------------------
// Flat parameter vector.
//
// Layout, block by block: a (M), the lower triangle of L in row-major order
// with diagonal entries stored as log L_ii, Z in row-major order when the
// block's inducing inputs are trainable, then the packed trainable kernel
// hyperparameters. After the blocks: log sigma2, then the packed trainable
// hyperparameters of the full-process prior kernel (if any). Untied
// coefficient prior kernels are never trained.

Vector pack_params(const SevgpModel& m);
SevgpModel unpack_params(const SevgpModel& layout, const Vector& p);
Index num_params(const SevgpModel& m);

/// Chain rule from natural-parameter gradients into the flat layout.
Vector pack_gradient(const SevgpModel& m, const ModelGradient& g);

/// Scalar function of a flat parameter vector with an exact gradient.
class DifferentiableObjective {
 public:
  virtual ~DifferentiableObjective() = default;
  virtual Index dim() const = 0;
  /// Value at p; fills *grad when non-null.
  virtual double evaluate(const Vector& p, Vector* grad) const = 0;
};

/// ||p||^2 / 2, handy for exercising the optimizers.
class QuadraticObjective final : public DifferentiableObjective {
 public:
  explicit QuadraticObjective(Index dim) : dim_(dim) {}
  Index dim() const override { return dim_; }
  double evaluate(const Vector& p, Vector* grad) const override;

 private:
  Index dim_;
};

/// The model's variant objective on fixed data, as a function of the flat
/// parameter vector.
class SevgpObjective final : public DifferentiableObjective {
 public:
  SevgpObjective(SevgpModel layout, ObjectiveInput input);
  Index dim() const override { return num_params(layout_); }
  double evaluate(const Vector& p, Vector* grad) const override;

  const SevgpModel& layout() const { return layout_; }

 private:
  SevgpModel layout_;
  ObjectiveInput input_;
};

/// Exact gradient; throws NumericalError when value or gradient is not finite.
Vector gradient(const DifferentiableObjective& objective, const Vector& p);

// ---------------------------------------------------------------------------
// Optimizers (ascent: they maximize).

struct AdamState {
  Vector m;
  Vector v;
  long t = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState zeros(Index dim);
};

struct RmsPropState {
  Vector v;
  double decay = 0.9;
  double eps = 1e-8;

  static RmsPropState zeros(Index dim);
};

void adam_step(AdamState& state, Vector& params, const Vector& grad, double lr);
void rmsprop_step(RmsPropState& state, Vector& params, const Vector& grad, double lr);

enum class OptimizerKind { Adam, RmsProp };

OptimizerKind parse_optimizer(std::string_view text);
std::string to_string(OptimizerKind k);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::Adam;
  double learning_rate = 1e-2;
  long iterations = 1000;
  Index batch_size = 100;
  Index augmentation = 20;
  /// Weight of the functional terms; nullopt means 1 / N.
  std::optional<double> lambda;
  std::uint64_t seed = 0;
  /// Emit "iteration<TAB>objective<TAB>sigma2" to stderr every this many
  /// steps; 0 disables progress output.
  long progress_every = 0;
};

struct FitResult {
  SevgpModel model;
  std::vector<double> trace;
};

/// Stochastic gradient ascent on the model's variant objective. Batches are
/// drawn from a seeded shuffle, augmentation points fresh each step inside
/// the data bounding box.
FitResult fit(const SevgpModel& init, const Dataset& data, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Initialization.

struct ModelOptions {
  Variant variant = Variant::V41;
  KernelSpec coeff_kernel = KernelSpec::sum(
      {KernelSpec::constant(1.0, false), KernelSpec::sq_exp(0.5, 1.0, false, true)});
  std::optional<KernelSpec> full_prior_kernel;
  /// Separate fixed coefficient prior kernel; nullopt ties each prior to the
  /// block kernel.
  std::optional<KernelSpec> coeff_prior_kernel;
  Index num_inducing = 3;
  bool include_bias_column = false;
  bool train_inducing = true;
  double sigma2 = 0.1;
};

/// a = 0, L = chol(K_MM) under the coefficient prior kernel, Z a random
/// subset of the training inputs (independent draw per block).
SevgpModel init_model(const Matrix& X, const ModelOptions& options, std::uint64_t seed);

}  // namespace sevgp
