#pragma once

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace sevgp {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Row view usable for rows of column-major matrices as well as transposed
/// vectors.
using RowView = Eigen::Ref<const Eigen::RowVectorXd, 0, Eigen::InnerStride<>>;

/// A kernel hyperparameter with its trainable flag.
struct Hyper {
  double value = 1.0;
  bool trainable = true;

  bool operator==(const Hyper&) const = default;
};

class KernelSpec;

struct ConstantKernel {
  Hyper c;
  bool operator==(const ConstantKernel&) const = default;
};

/// a * exp(-|x - x'|^2 / (2 l^2)), isotropic over all input dimensions.
struct SqExpKernel {
  Hyper amplitude;
  Hyper lengthscale;
  bool operator==(const SqExpKernel&) const = default;
};

/// theta * exp(-0.5 sum_k (x_k - x'_k)^2 / l_k^2).
struct ArdKernel {
  Hyper theta;
  std::vector<Hyper> lengthscales;
  bool operator==(const ArdKernel&) const = default;
};

/// (x . x')^degree, no hyperparameters.
struct PolynomialKernel {
  int degree = 2;
  bool operator==(const PolynomialKernel&) const = default;
};

struct SumKernel {
  std::vector<KernelSpec> children;
  bool operator==(const SumKernel&) const;
};

/// Immutable symbolic kernel description.
///
/// Positive hyperparameters (amplitudes, lengthscales) are packed in log
/// space; the constant of a ConstantKernel may be zero, in which case it must
/// be frozen. Sums nest at most kMaxDepth levels.
class KernelSpec {
 public:
  using Node = std::variant<ConstantKernel, SqExpKernel, ArdKernel,
                            PolynomialKernel, SumKernel>;

  static constexpr int kMaxDepth = 4;

  static KernelSpec constant(double c, bool trainable = true);
  static KernelSpec sq_exp(double amplitude, double lengthscale,
                           bool amplitude_trainable = true,
                           bool lengthscale_trainable = true);
  static KernelSpec ard(double theta, std::vector<double> lengthscales,
                        bool theta_trainable = true,
                        bool lengthscales_trainable = true);
  static KernelSpec polynomial(int degree = 2);
  static KernelSpec sum(std::vector<KernelSpec> children);

  explicit KernelSpec(Node node);

  const Node& node() const { return node_; }

  /// Input dimension required by the kernel, or -1 when any dimension works.
  Index input_dim() const;

  /// Number of trainable hyperparameters (length of pack_params()).
  Index num_params() const;

  int depth() const;

  bool operator==(const KernelSpec& other) const { return node_ == other.node_; }

 private:
  Node node_;
};

double eval(const KernelSpec& k, const Vector& x, const Vector& x2);
double eval(const KernelSpec& k, RowView x, RowView x2);

/// Gram matrix K_(ij) = k(row i of X, row j of X2).
Matrix gram(const KernelSpec& k, const Matrix& X, const Matrix& X2);

/// Diagonal of gram(k, X, X).
Vector gram_diag(const KernelSpec& k, const Matrix& X);

/// Accumulates the gradient of sum_ij adj(i,j) * k(X_i, X2_j) with respect to
/// the rows of X (into dX), the rows of X2 (into dX2) and the packed
/// hyperparameters (into dparams). Either of dX, dX2 may be null; both may
/// alias the same matrix when X and X2 are the same point set.
void gram_backward(const KernelSpec& k, const Matrix& X, const Matrix& X2,
                   const Matrix& adj, Matrix* dX, Matrix* dX2,
                   Eigen::Ref<Vector> dparams);

/// Same as gram_backward restricted to the diagonal pairs (X_i, X_i), with
/// adjoint weights adj_diag(i). Input locations are treated as fixed.
void gram_diag_backward(const KernelSpec& k, const Matrix& X,
                        const Vector& adj_diag, Eigen::Ref<Vector> dparams);

/// Trainable hyperparameters in log space, pre-order traversal.
Vector pack_params(const KernelSpec& k);
KernelSpec unpack_params(const KernelSpec& k, const Vector& packed);

/// Replicates a single ARD lengthscale to `dim` entries (recursively through
/// sums). Kernels that already match are returned unchanged.
KernelSpec broadcast_to_dim(const KernelSpec& k, Index dim);

/// Parses the kernel expression grammar documented in docs/kernels.md, e.g.
/// "sum(constant(fixed(1)), se(a=fixed(0.5), l=1))".
KernelSpec parse_kernel(std::string_view text);

/// Canonical expression; parse_kernel(format_kernel(k)) == k bit for bit.
std::string format_kernel(const KernelSpec& k);

}  // namespace sevgp
