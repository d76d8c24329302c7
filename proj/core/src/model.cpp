#include "sevgp/model.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "sevgp/errors.hpp"

namespace sevgp {
namespace {

using nlohmann::json;

constexpr int kModelFormatVersion = 1;

void require_inputs(const SevgpModel& m, const Matrix& X) {
  if (X.cols() != m.input_dim()) {
    throw InvalidArgument("model expects " + std::to_string(m.input_dim()) +
                          " input features, got " + std::to_string(X.cols()));
  }
}

// Shared factorization of one block: chol(K_MM + jitter) and
// A = (K_MM + jitter)^-1 a.
struct BlockFactor {
  CholeskyFactor kmm;
  Vector A;
};

BlockFactor factor_block(const CoefficientBlock& b) {
  BlockFactor f{cholesky_psd(gram(b.kernel, b.Z, b.Z)), Vector()};
  f.A = chol_solve(f.kmm.lower, b.a);
  return f;
}

// Coefficient means row by row with a fixed summation order, so that
// predict and explain produce bitwise-identical numbers.
Vector block_means(const CoefficientBlock& b, const BlockFactor& f, const Matrix& X) {
  Vector mu(X.rows());
  for (Index i = 0; i < X.rows(); ++i) {
    double s = 0.0;
    for (Index j = 0; j < b.Z.rows(); ++j) s += eval(b.kernel, RowView(X.row(i)), RowView(b.Z.row(j))) * f.A(j);
    mu(i) = s;
  }
  return mu;
}

struct BlockTerms {
  Matrix V;   // L_mm^-1 K_MN
  Matrix LS;  // (Lambda L)^T = L^T K_MM^-1 K_MN
};

BlockTerms block_terms(const CoefficientBlock& b, const BlockFactor& f, const Matrix& X) {
  const Matrix Kmn = gram(b.kernel, b.Z, X);
  BlockTerms t;
  t.V = f.kmm.lower.triangularView<Eigen::Lower>().solve(Kmn);
  t.LS = b.L.transpose() * chol_solve(f.kmm.lower, Kmn);
  return t;
}

Marginals block_marginals(const CoefficientBlock& b, const BlockFactor& f, const Matrix& X) {
  const BlockTerms t = block_terms(b, f, X);
  Marginals out;
  out.mean = block_means(b, f, X);
  out.var = gram_diag(b.kernel, X) - t.V.colwise().squaredNorm().transpose() +
            t.LS.colwise().squaredNorm().transpose();
  return out;
}

Matrix block_cov(const CoefficientBlock& b, const BlockFactor& f, const Matrix& X) {
  const BlockTerms t = block_terms(b, f, X);
  Matrix cov = gram(b.kernel, X, X) - t.V.transpose() * t.V + t.LS.transpose() * t.LS;
  return 0.5 * (cov + cov.transpose());
}

json matrix_to_json(const Matrix& M) {
  json arr = json::array();
  for (Index i = 0; i < M.rows(); ++i)
    for (Index j = 0; j < M.cols(); ++j) arr.push_back(M(i, j));
  return arr;
}

Matrix matrix_from_json(const json& arr, Index rows, Index cols, const char* what) {
  if (!arr.is_array() || static_cast<Index>(arr.size()) != rows * cols) {
    throw SchemaError(std::string("model file: '") + what + "' must hold " +
                      std::to_string(rows * cols) + " numbers");
  }
  Matrix M(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) {
      const json& v = arr[static_cast<std::size_t>(i * cols + j)];
      if (!v.is_number()) throw SchemaError(std::string("model file: non-numeric entry in ") + what);
      M(i, j) = v.get<double>();
    }
  return M;
}

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::V41: return "4.1";
    case Variant::V42: return "4.2";
    case Variant::V43: return "4.3";
  }
  return "?";
}

Variant parse_variant(std::string_view text) {
  std::string s;
  for (char c : text)
    if (c != '.' && c != 'v' && c != 'V') s.push_back(c);
  if (s == "41") return Variant::V41;
  if (s == "42") return Variant::V42;
  if (s == "43") return Variant::V43;
  throw SchemaError("unknown variant '" + std::string(text) + "' (expected 41, 42 or 43)");
}

Index SevgpModel::input_dim() const { return blocks.empty() ? 0 : blocks.front().Z.cols(); }

void validate(const SevgpModel& m) {
  if (m.blocks.empty()) throw InvalidArgument("model has no coefficient blocks");
  if (!(m.sigma2 >= 0.0) || !std::isfinite(m.sigma2)) throw InvalidArgument("sigma2 must be >= 0");
  const Index dim = m.input_dim();
  const Index design_cols = dim + (m.include_bias_column ? 1 : 0);
  if (m.num_blocks() != design_cols) {
    throw InvalidArgument("model has " + std::to_string(m.num_blocks()) +
                          " blocks but the design has " + std::to_string(design_cols) + " columns");
  }
  for (std::size_t k = 0; k < m.blocks.size(); ++k) {
    const auto& b = m.blocks[k];
    const Index M = b.Z.rows();
    const std::string where = "block " + std::to_string(k) + ": ";
    if (M < 1) throw InvalidArgument(where + "needs at least one inducing point");
    if (b.Z.cols() != dim) throw InvalidArgument(where + "inducing inputs have wrong dimension");
    if (b.a.size() != M || b.L.rows() != M || b.L.cols() != M) {
      throw InvalidArgument(where + "variational parameters do not match the inducing count");
    }
    if (!b.L.isLowerTriangular(0.0)) throw InvalidArgument(where + "L is not lower triangular");
    if ((b.L.diagonal().array() <= 0.0).any()) {
      throw InvalidArgument(where + "L needs a strictly positive diagonal");
    }
    if (b.feature_index != static_cast<Index>(k)) {
      throw InvalidArgument(where + "feature_index must equal the block position");
    }
    const Index kd = b.kernel.input_dim();
    if (kd >= 0 && kd != dim) throw InvalidArgument(where + "kernel dimension mismatch");
  }
  if (!m.coeff_prior_kernels.empty() &&
      static_cast<Index>(m.coeff_prior_kernels.size()) != m.num_blocks()) {
    throw InvalidArgument("need one coefficient prior kernel per block (or none to tie them)");
  }
  if ((m.variant == Variant::V42 || m.variant == Variant::V43) && !m.full_prior_kernel) {
    throw InvalidArgument("variant " + to_string(m.variant) + " needs a full-process prior kernel");
  }
}

const KernelSpec& coeff_prior_kernel(const SevgpModel& m, Index k) {
  if (k < 0 || k >= m.num_blocks()) throw InvalidArgument("block index out of range");
  return m.tied_coeff_priors() ? m.blocks[static_cast<std::size_t>(k)].kernel
                               : m.coeff_prior_kernels[static_cast<std::size_t>(k)];
}

Matrix design_matrix(const SevgpModel& m, const Matrix& X) {
  require_inputs(m, X);
  if (!m.include_bias_column) return X;
  Matrix D(X.rows(), X.cols() + 1);
  D.col(0).setOnes();
  D.rightCols(X.cols()) = X;
  return D;
}

Matrix lambda_matrix(const CoefficientBlock& b, const Matrix& X) {
  if (X.cols() != b.Z.cols()) throw InvalidArgument("lambda_matrix: input dimension mismatch");
  const auto kmm = cholesky_psd(gram(b.kernel, b.Z, b.Z));
  return chol_solve(kmm.lower, gram(b.kernel, b.Z, X)).transpose();
}

GaussianDist coeff_posterior(const CoefficientBlock& b, const Matrix& X) {
  if (X.cols() != b.Z.cols()) throw InvalidArgument("coeff_posterior: input dimension mismatch");
  const BlockFactor f = factor_block(b);
  return GaussianDist(block_means(b, f, X), block_cov(b, f, X));
}

Marginals coeff_marginals(const CoefficientBlock& b, const Matrix& X) {
  if (X.cols() != b.Z.cols()) throw InvalidArgument("coeff_marginals: input dimension mismatch");
  return block_marginals(b, factor_block(b), X);
}

GaussianDist predict_f(const SevgpModel& m, const Matrix& X) {
  const Matrix D = design_matrix(m, X);
  Vector mean = Vector::Zero(X.rows());
  Matrix cov = Matrix::Zero(X.rows(), X.rows());
  for (const auto& b : m.blocks) {
    const BlockFactor f = factor_block(b);
    const auto xk = D.col(b.feature_index);
    mean.array() += block_means(b, f, X).array() * xk.array();
    cov.array() += block_cov(b, f, X).array() * (xk * xk.transpose()).array();
  }
  return GaussianDist(std::move(mean), std::move(cov));
}

Marginals predict_f_marginals(const SevgpModel& m, const Matrix& X) {
  const Matrix D = design_matrix(m, X);
  Marginals out{Vector::Zero(X.rows()), Vector::Zero(X.rows())};
  for (const auto& b : m.blocks) {
    const Marginals bm = block_marginals(b, factor_block(b), X);
    const auto xk = D.col(b.feature_index);
    out.mean.array() += bm.mean.array() * xk.array();
    out.var.array() += bm.var.array() * xk.array().square();
  }
  return out;
}

GaussianDist conditional_f_given_inducing(const SevgpModel& m, const Matrix& X,
                                          std::span<const Vector> u) {
  const Matrix D = design_matrix(m, X);
  if (static_cast<Index>(u.size()) != m.num_blocks()) {
    throw InvalidArgument("conditional_f_given_inducing: need one inducing vector per block");
  }
  Vector mean = Vector::Zero(X.rows());
  Matrix cov = Matrix::Zero(X.rows(), X.rows());
  for (std::size_t k = 0; k < m.blocks.size(); ++k) {
    const auto& b = m.blocks[k];
    if (u[k].size() != b.num_inducing()) {
      throw InvalidArgument("conditional_f_given_inducing: inducing vector length mismatch");
    }
    const auto kmm = cholesky_psd(gram(b.kernel, b.Z, b.Z));
    const Matrix Kmn = gram(b.kernel, b.Z, X);
    const Matrix V = kmm.lower.triangularView<Eigen::Lower>().solve(Kmn);
    const Vector mu = Kmn.transpose() * chol_solve(kmm.lower, u[k]);
    const auto xk = D.col(b.feature_index);
    mean.array() += mu.array() * xk.array();
    cov.array() += (gram(b.kernel, X, X) - V.transpose() * V).array() * (xk * xk.transpose()).array();
  }
  cov = 0.5 * (cov + cov.transpose()).eval();
  return GaussianDist(std::move(mean), std::move(cov));
}

GaussianDist predict_y(const SevgpModel& m, const Matrix& X) {
  const GaussianDist f = predict_f(m, X);
  Matrix cov = f.cov();
  cov.diagonal().array() += m.sigma2;
  return GaussianDist(f.mean(), std::move(cov));
}

Marginals predict_y_marginals(const SevgpModel& m, const Matrix& X) {
  Marginals out = predict_f_marginals(m, X);
  out.var.array() += m.sigma2;
  return out;
}

std::vector<Contribution> explain(const SevgpModel& m, const Vector& x) {
  const Matrix X = x.transpose();
  const Matrix D = design_matrix(m, X);
  std::vector<Contribution> out;
  out.reserve(m.blocks.size());
  for (const auto& b : m.blocks) {
    const Marginals bm = block_marginals(b, factor_block(b), X);
    const double xk = D(0, b.feature_index);
    out.push_back({bm.mean(0), bm.var(0), bm.mean(0) * xk});
  }
  return out;
}

Matrix coefficient_means(const SevgpModel& m, const Matrix& X) {
  require_inputs(m, X);
  Matrix F(X.rows(), m.num_blocks());
  for (const auto& b : m.blocks) F.col(b.feature_index) = block_means(b, factor_block(b), X);
  return F;
}

Matrix gpx_prior_cov(const SevgpModel& m, const Matrix& X) {
  const Matrix D = design_matrix(m, X);
  Matrix C = Matrix::Zero(X.rows(), X.rows());
  for (Index k = 0; k < m.num_blocks(); ++k) {
    const auto xk = D.col(m.blocks[static_cast<std::size_t>(k)].feature_index);
    C.array() += gram(coeff_prior_kernel(m, k), X, X).array() * (xk * xk.transpose()).array();
  }
  return C;
}

std::string model_to_json(const SevgpModel& m) {
  validate(m);
  json doc;
  doc["format"] = "sevgp-model";
  doc["version"] = kModelFormatVersion;
  doc["variant"] = to_string(m.variant);
  doc["sigma2"] = m.sigma2;
  doc["include_bias_column"] = m.include_bias_column;
  doc["input_dim"] = m.input_dim();
  doc["full_prior_kernel"] =
      m.full_prior_kernel ? json(format_kernel(*m.full_prior_kernel)) : json(nullptr);
  doc["coeff_prior_kernels"] = json::array();
  for (const auto& k : m.coeff_prior_kernels) doc["coeff_prior_kernels"].push_back(format_kernel(k));
  doc["blocks"] = json::array();
  for (const auto& b : m.blocks) {
    json jb;
    jb["feature_index"] = b.feature_index;
    jb["kernel"] = format_kernel(b.kernel);
    jb["train_inducing"] = b.train_inducing;
    jb["num_inducing"] = b.num_inducing();
    jb["Z"] = matrix_to_json(b.Z);
    jb["a"] = matrix_to_json(b.a);
    jb["L"] = matrix_to_json(b.L);
    doc["blocks"].push_back(std::move(jb));
  }
  return doc.dump(1);
}

SevgpModel model_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (doc.value("format", "") != "sevgp-model") throw SchemaError("not a sevgp model file");
    const int version = doc.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw SchemaError("unsupported model format version " + std::to_string(version));
    }
    SevgpModel m;
    m.variant = parse_variant(doc.at("variant").get<std::string>());
    m.sigma2 = doc.at("sigma2").get<double>();
    m.include_bias_column = doc.at("include_bias_column").get<bool>();
    const Index dim = doc.at("input_dim").get<Index>();
    if (!doc.at("full_prior_kernel").is_null()) {
      m.full_prior_kernel = parse_kernel(doc["full_prior_kernel"].get<std::string>());
    }
    for (const auto& k : doc.at("coeff_prior_kernels")) {
      m.coeff_prior_kernels.push_back(parse_kernel(k.get<std::string>()));
    }
    for (const auto& jb : doc.at("blocks")) {
      const Index M = jb.at("num_inducing").get<Index>();
      CoefficientBlock b{matrix_from_json(jb.at("Z"), M, dim, "Z"),
                         matrix_from_json(jb.at("a"), M, 1, "a"),
                         matrix_from_json(jb.at("L"), M, M, "L"),
                         parse_kernel(jb.at("kernel").get<std::string>()),
                         jb.at("feature_index").get<Index>(), jb.at("train_inducing").get<bool>()};
      m.blocks.push_back(std::move(b));
    }
    validate(m);
    return m;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model file: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw SchemaError(std::string("model file: ") + e.what());
  }
}

void save_model(const SevgpModel& m, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file " + path.string());
  out << model_to_json(m) << '\n';
}

SevgpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json(ss.str());
}

}  // namespace sevgp
