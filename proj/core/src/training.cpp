#include "sevgp/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "sevgp/errors.hpp"

namespace sevgp {
namespace {

Index block_param_count(const CoefficientBlock& b) {
  const Index M = b.num_inducing();
  return M + M * (M + 1) / 2 + (b.train_inducing ? b.Z.size() : 0) + b.kernel.num_params();
}

void require_finite(double value, const Vector* grad, std::optional<long> iteration) {
  if (!std::isfinite(value)) {
    throw NumericalError("objective is not finite" +
                             (iteration ? " at iteration " + std::to_string(*iteration) : ""),
                         iteration);
  }
  if (grad && !grad->allFinite()) {
    throw NumericalError("gradient is not finite" +
                             (iteration ? " at iteration " + std::to_string(*iteration) : ""),
                         iteration);
  }
}

}  // namespace

Index num_params(const SevgpModel& m) {
  Index n = 1;
  for (const auto& b : m.blocks) n += block_param_count(b);
  if (m.full_prior_kernel) n += m.full_prior_kernel->num_params();
  return n;
}

Vector pack_params(const SevgpModel& m) {
  Vector p(num_params(m));
  Index pos = 0;
  for (const auto& b : m.blocks) {
    const Index M = b.num_inducing();
    p.segment(pos, M) = b.a;
    pos += M;
    for (Index i = 0; i < M; ++i)
      for (Index j = 0; j <= i; ++j) p(pos++) = i == j ? std::log(b.L(i, i)) : b.L(i, j);
    if (b.train_inducing) {
      for (Index i = 0; i < b.Z.rows(); ++i)
        for (Index d = 0; d < b.Z.cols(); ++d) p(pos++) = b.Z(i, d);
    }
    const Vector kp = sevgp::pack_params(b.kernel);
    p.segment(pos, kp.size()) = kp;
    pos += kp.size();
  }
  p(pos++) = std::log(m.sigma2);
  if (m.full_prior_kernel) {
    const Vector kp = sevgp::pack_params(*m.full_prior_kernel);
    p.segment(pos, kp.size()) = kp;
    pos += kp.size();
  }
  return p;
}

SevgpModel unpack_params(const SevgpModel& layout, const Vector& p) {
  if (p.size() != num_params(layout)) {
    throw InvalidArgument("unpack_params: expected " + std::to_string(num_params(layout)) +
                          " values, got " + std::to_string(p.size()));
  }
  SevgpModel m = layout;
  Index pos = 0;
  for (auto& b : m.blocks) {
    const Index M = b.num_inducing();
    b.a = p.segment(pos, M);
    pos += M;
    b.L.setZero();
    for (Index i = 0; i < M; ++i)
      for (Index j = 0; j <= i; ++j) {
        b.L(i, j) = i == j ? std::exp(p(pos)) : p(pos);
        ++pos;
      }
    if (b.train_inducing) {
      for (Index i = 0; i < b.Z.rows(); ++i)
        for (Index d = 0; d < b.Z.cols(); ++d) b.Z(i, d) = p(pos++);
    }
    const Index nk = b.kernel.num_params();
    b.kernel = sevgp::unpack_params(b.kernel, p.segment(pos, nk));
    pos += nk;
  }
  m.sigma2 = std::exp(p(pos++));
  if (m.full_prior_kernel) {
    const Index nk = m.full_prior_kernel->num_params();
    m.full_prior_kernel = sevgp::unpack_params(*m.full_prior_kernel, p.segment(pos, nk));
    pos += nk;
  }
  return m;
}

Vector pack_gradient(const SevgpModel& m, const ModelGradient& g) {
  if (g.blocks.size() != m.blocks.size()) throw InvalidArgument("pack_gradient: block count");
  Vector out(num_params(m));
  Index pos = 0;
  for (std::size_t k = 0; k < m.blocks.size(); ++k) {
    const auto& b = m.blocks[k];
    const auto& gb = g.blocks[k];
    const Index M = b.num_inducing();
    out.segment(pos, M) = gb.a;
    pos += M;
    for (Index i = 0; i < M; ++i)
      for (Index j = 0; j <= i; ++j) out(pos++) = i == j ? gb.L(i, i) * b.L(i, i) : gb.L(i, j);
    if (b.train_inducing) {
      for (Index i = 0; i < b.Z.rows(); ++i)
        for (Index d = 0; d < b.Z.cols(); ++d) out(pos++) = gb.Z(i, d);
    }
    out.segment(pos, gb.kernel.size()) = gb.kernel;
    pos += gb.kernel.size();
  }
  out(pos++) = g.log_sigma2;
  if (m.full_prior_kernel) {
    out.segment(pos, g.full_prior.size()) = g.full_prior;
    pos += g.full_prior.size();
  }
  return out;
}

double QuadraticObjective::evaluate(const Vector& p, Vector* grad) const {
  if (p.size() != dim_) throw InvalidArgument("QuadraticObjective: dimension mismatch");
  if (grad) *grad = p;
  return 0.5 * p.squaredNorm();
}

SevgpObjective::SevgpObjective(SevgpModel layout, ObjectiveInput input)
    : layout_(std::move(layout)), input_(std::move(input)) {
  validate(layout_);
}

double SevgpObjective::evaluate(const Vector& p, Vector* grad) const {
  const SevgpModel m = unpack_params(layout_, p);
  if (!grad) return evaluate_objective(m, input_).value;
  ModelGradient g;
  const double value = evaluate_objective(m, input_, &g).value;
  *grad = pack_gradient(m, g);
  return value;
}

Vector gradient(const DifferentiableObjective& objective, const Vector& p) {
  if (p.size() != objective.dim()) throw InvalidArgument("gradient: parameter length mismatch");
  Vector g;
  const double value = objective.evaluate(p, &g);
  require_finite(value, &g, std::nullopt);
  return g;
}

AdamState AdamState::zeros(Index dim) {
  AdamState s;
  s.m = Vector::Zero(dim);
  s.v = Vector::Zero(dim);
  return s;
}

RmsPropState RmsPropState::zeros(Index dim) {
  RmsPropState s;
  s.v = Vector::Zero(dim);
  return s;
}

void adam_step(AdamState& s, Vector& params, const Vector& grad, double lr) {
  if (grad.size() != params.size() || s.m.size() != params.size() || s.v.size() != params.size()) {
    throw InvalidArgument("adam_step: dimension mismatch");
  }
  ++s.t;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  params.array() += lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
}

void rmsprop_step(RmsPropState& s, Vector& params, const Vector& grad, double lr) {
  if (grad.size() != params.size() || s.v.size() != params.size()) {
    throw InvalidArgument("rmsprop_step: dimension mismatch");
  }
  s.v = s.decay * s.v + (1.0 - s.decay) * grad.cwiseAbs2();
  params.array() += lr * grad.array() / (s.v.array().sqrt() + s.eps);
}

OptimizerKind parse_optimizer(std::string_view text) {
  std::string s;
  for (char c : text) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "rmsprop") return OptimizerKind::RmsProp;
  throw SchemaError("unknown optimizer '" + std::string(text) + "' (expected adam or rmsprop)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "rmsprop"; }

FitResult fit(const SevgpModel& init, const Dataset& data, const TrainConfig& config) {
  validate(init);
  validate(data);
  if (data.num_features() != init.input_dim()) {
    throw InvalidArgument("fit: data has " + std::to_string(data.num_features()) +
                          " features, model expects " + std::to_string(init.input_dim()));
  }
  if (config.iterations < 0 || config.batch_size < 1 || config.augmentation < 0 ||
      !(config.learning_rate > 0.0)) {
    throw InvalidArgument("fit: invalid training configuration");
  }
  FitResult result{init, {}};
  if (config.iterations == 0) return result;

  const Index n = data.size();
  const Index batch = std::min(config.batch_size, n);
  const bool functional = init.variant != Variant::V41;
  const double lambda = config.lambda.value_or(1.0 / static_cast<double>(n));
  auto bounds = data.bounds();
  for (auto& [lo, hi] : bounds) {
    if (!(lo < hi)) hi = lo + 1e-9;
  }

  std::mt19937_64 rng(config.seed);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Index cursor = n;

  Vector p = pack_params(init);
  AdamState adam = AdamState::zeros(p.size());
  RmsPropState rms = RmsPropState::zeros(p.size());
  result.trace.reserve(static_cast<std::size_t>(config.iterations));

  ObjectiveInput in;
  in.lambda = lambda;
  in.n_total = n;
  in.X.resize(batch, data.num_features());
  in.y.resize(batch);
  for (long it = 0; it < config.iterations; ++it) {
    if (batch == n) {
      in.X = data.X;
      in.y = data.y;
    } else {
      for (Index i = 0; i < batch; ++i) {
        if (cursor == n) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const Index r = order[static_cast<std::size_t>(cursor++)];
        in.X.row(i) = data.X.row(r);
        in.y(i) = data.y(r);
      }
    }
    if (functional) {
      in.measurement = make_measurement_set(
          in.X, sample_augmentation(bounds, config.augmentation, rng));
    }
    // Once the initial point is valid, any rejection of the unpacked
    // parameters (overflowed exp, zero lengthscale) is divergence.
    SevgpModel current;
    ModelGradient mg;
    double value = 0.0;
    try {
      current = unpack_params(init, p);
      value = evaluate_objective(current, in, &mg).value;
    } catch (const NumericalError&) {
      throw;
    } catch (const Error& e) {
      if (it == 0) throw;
      throw NumericalError("training diverged at iteration " + std::to_string(it) + ": " + e.what(), it);
    }
    const Vector g = pack_gradient(current, mg);
    require_finite(value, &g, it);
    result.trace.push_back(value);
    if (config.progress_every > 0 && it % config.progress_every == 0) {
      std::cerr << it << '\t' << value << '\t' << current.sigma2 << '\n';
    }
    if (config.optimizer == OptimizerKind::Adam) adam_step(adam, p, g, config.learning_rate);
    else rmsprop_step(rms, p, g, config.learning_rate);
  }
  try {
    result.model = unpack_params(init, p);
  } catch (const NumericalError&) {
    throw;
  } catch (const Error& e) {
    throw NumericalError(std::string("training diverged on the final step: ") + e.what(), config.iterations);
  }
  return result;
}

SevgpModel init_model(const Matrix& X, const ModelOptions& options, std::uint64_t seed) {
  const Index n = X.rows();
  const Index dim = X.cols();
  const Index M = options.num_inducing;
  if (M < 1) throw InvalidArgument("init_model: need at least one inducing point");
  if (M > n) throw InvalidArgument("init_model: more inducing points than training rows");
  if (!(options.sigma2 > 0.0)) throw InvalidArgument("init_model: sigma2 must be positive");

  SevgpModel m;
  m.variant = options.variant;
  m.sigma2 = options.sigma2;
  m.include_bias_column = options.include_bias_column;
  if (options.full_prior_kernel) m.full_prior_kernel = broadcast_to_dim(*options.full_prior_kernel, dim);
  const KernelSpec kernel = broadcast_to_dim(options.coeff_kernel, dim);
  const Index blocks = dim + (options.include_bias_column ? 1 : 0);
  if (options.coeff_prior_kernel) {
    m.coeff_prior_kernels.assign(static_cast<std::size_t>(blocks),
                                 broadcast_to_dim(*options.coeff_prior_kernel, dim));
  }

  std::mt19937_64 rng(seed);
  std::vector<Index> rows(static_cast<std::size_t>(n));
  for (Index k = 0; k < blocks; ++k) {
    std::iota(rows.begin(), rows.end(), Index{0});
    std::shuffle(rows.begin(), rows.end(), rng);
    CoefficientBlock b{Matrix(M, dim), Vector::Zero(M), Matrix(), kernel, k, options.train_inducing};
    for (Index i = 0; i < M; ++i) b.Z.row(i) = X.row(rows[static_cast<std::size_t>(i)]);
    m.blocks.push_back(std::move(b));
  }
  for (Index k = 0; k < blocks; ++k) {
    auto& b = m.blocks[static_cast<std::size_t>(k)];
    b.L = cholesky_psd(gram(coeff_prior_kernel(m, k), b.Z, b.Z)).lower;
  }
  validate(m);
  return m;
}

}  // namespace sevgp
