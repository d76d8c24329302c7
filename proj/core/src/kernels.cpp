#include "sevgp/kernels.hpp"

#include <charconv>
#include <cmath>
#include <cctype>
#include <sstream>

#include "sevgp/errors.hpp"

namespace sevgp {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require_positive(const Hyper& h, const char* name) {
  if (!(h.value > 0.0)) {
    throw InvalidArgument(std::string("kernel hyperparameter '") + name +
                          "' must be strictly positive");
  }
}

void validate(const KernelSpec::Node& node, int depth) {
  if (depth > KernelSpec::kMaxDepth) {
    throw InvalidArgument("kernel nesting deeper than " +
                          std::to_string(KernelSpec::kMaxDepth));
  }
  std::visit(
      Overloaded{
          [](const ConstantKernel& k) {
            if (!(k.c.value >= 0.0) || !std::isfinite(k.c.value)) {
              throw InvalidArgument("constant kernel value must be finite and nonnegative");
            }
            if (k.c.trainable && k.c.value == 0.0) {
              throw InvalidArgument("a zero constant kernel cannot be trainable (log-space packing)");
            }
          },
          [](const SqExpKernel& k) {
            require_positive(k.amplitude, "a");
            require_positive(k.lengthscale, "l");
          },
          [](const ArdKernel& k) {
            require_positive(k.theta, "theta");
            if (k.lengthscales.empty()) {
              throw InvalidArgument("ARD kernel needs at least one lengthscale");
            }
            for (const auto& l : k.lengthscales) require_positive(l, "l");
          },
          [](const PolynomialKernel& k) {
            if (k.degree < 1) throw InvalidArgument("polynomial degree must be >= 1");
          },
          [depth](const SumKernel& k) {
            if (k.children.empty()) throw InvalidArgument("sum kernel needs at least one child");
            for (const auto& c : k.children) validate(c.node(), depth + 1);
          },
      },
      node);
}

double eval_node(const KernelSpec& k, RowView x, RowView x2) {
  return std::visit(
      Overloaded{
          [](const ConstantKernel& c) { return c.c.value; },
          [&](const SqExpKernel& s) {
            const double r2 = (x - x2).squaredNorm();
            const double l = s.lengthscale.value;
            return s.amplitude.value * std::exp(-0.5 * r2 / (l * l));
          },
          [&](const ArdKernel& a) {
            double q = 0.0;
            for (Index d = 0; d < x.size(); ++d) {
              const double l = a.lengthscales[static_cast<std::size_t>(d)].value;
              const double diff = (x(d) - x2(d)) / l;
              q += diff * diff;
            }
            return a.theta.value * std::exp(-0.5 * q);
          },
          [&](const PolynomialKernel& p) {
            return std::pow(x.dot(x2), p.degree);
          },
          [&](const SumKernel& s) {
            double total = 0.0;
            for (const auto& c : s.children) total += eval_node(c, x, x2);
            return total;
          },
      },
      k.node());
}

// Accumulates w * d k(x, x2) into gx / gx2 (may be null) and into the packed
// log-space parameter gradient starting at `cursor`.
void grad_node(const KernelSpec& k, RowView x, RowView x2, double w, double* gx,
               double* gx2, double* dparams, Index& cursor) {
  std::visit(
      Overloaded{
          [&](const ConstantKernel& c) {
            if (c.c.trainable) dparams[cursor++] += w * c.c.value;
          },
          [&](const SqExpKernel& s) {
            const double l = s.lengthscale.value;
            const double r2 = (x - x2).squaredNorm();
            const double kv = s.amplitude.value * std::exp(-0.5 * r2 / (l * l));
            if (s.amplitude.trainable) dparams[cursor++] += w * kv;
            if (s.lengthscale.trainable) dparams[cursor++] += w * kv * r2 / (l * l);
            if (gx || gx2) {
              const double coef = -w * kv / (l * l);
              for (Index d = 0; d < x.size(); ++d) {
                const double diff = x(d) - x2(d);
                if (gx) gx[d] += coef * diff;
                if (gx2) gx2[d] -= coef * diff;
              }
            }
          },
          [&](const ArdKernel& a) {
            double q = 0.0;
            for (Index d = 0; d < x.size(); ++d) {
              const double diff = (x(d) - x2(d)) / a.lengthscales[static_cast<std::size_t>(d)].value;
              q += diff * diff;
            }
            const double kv = a.theta.value * std::exp(-0.5 * q);
            if (a.theta.trainable) dparams[cursor++] += w * kv;
            for (Index d = 0; d < x.size(); ++d) {
              const Hyper& lh = a.lengthscales[static_cast<std::size_t>(d)];
              const double l2 = lh.value * lh.value;
              const double diff = x(d) - x2(d);
              if (lh.trainable) dparams[cursor++] += w * kv * diff * diff / l2;
              const double g = -w * kv * diff / l2;
              if (gx) gx[d] += g;
              if (gx2) gx2[d] -= g;
            }
          },
          [&](const PolynomialKernel& p) {
            if (!gx && !gx2) return;
            const double s = x.dot(x2);
            const double coef = w * p.degree * std::pow(s, p.degree - 1);
            for (Index d = 0; d < x.size(); ++d) {
              if (gx) gx[d] += coef * x2(d);
              if (gx2) gx2[d] += coef * x(d);
            }
          },
          [&](const SumKernel& s) {
            for (const auto& c : s.children) grad_node(c, x, x2, w, gx, gx2, dparams, cursor);
          },
      },
      k.node());
}

void check_dims(const KernelSpec& k, Index a, Index b) {
  if (a != b) {
    throw InvalidArgument("kernel inputs have different dimensions (" + std::to_string(a) +
                          " vs " + std::to_string(b) + ")");
  }
  const Index want = k.input_dim();
  if (want >= 0 && want != a) {
    throw InvalidArgument("kernel expects inputs of dimension " + std::to_string(want) +
                          ", got " + std::to_string(a));
  }
}

void pack_node(const KernelSpec& k, std::vector<double>& out) {
  std::visit(Overloaded{
                 [&](const ConstantKernel& c) {
                   if (c.c.trainable) out.push_back(std::log(c.c.value));
                 },
                 [&](const SqExpKernel& s) {
                   if (s.amplitude.trainable) out.push_back(std::log(s.amplitude.value));
                   if (s.lengthscale.trainable) out.push_back(std::log(s.lengthscale.value));
                 },
                 [&](const ArdKernel& a) {
                   if (a.theta.trainable) out.push_back(std::log(a.theta.value));
                   for (const auto& l : a.lengthscales)
                     if (l.trainable) out.push_back(std::log(l.value));
                 },
                 [](const PolynomialKernel&) {},
                 [&](const SumKernel& s) {
                   for (const auto& c : s.children) pack_node(c, out);
                 },
             },
             k.node());
}

KernelSpec::Node unpack_node(const KernelSpec& k, const Vector& v, Index& cursor) {
  auto take = [&](Hyper h) {
    if (h.trainable) h.value = std::exp(v(cursor++));
    return h;
  };
  return std::visit(
      Overloaded{
          [&](const ConstantKernel& c) -> KernelSpec::Node { return ConstantKernel{take(c.c)}; },
          [&](const SqExpKernel& s) -> KernelSpec::Node {
            const Hyper a = take(s.amplitude);
            const Hyper l = take(s.lengthscale);
            return SqExpKernel{a, l};
          },
          [&](const ArdKernel& a) -> KernelSpec::Node {
            ArdKernel out;
            out.theta = take(a.theta);
            for (const auto& l : a.lengthscales) out.lengthscales.push_back(take(l));
            return out;
          },
          [](const PolynomialKernel& p) -> KernelSpec::Node { return p; },
          [&](const SumKernel& s) -> KernelSpec::Node {
            SumKernel out;
            for (const auto& c : s.children) out.children.emplace_back(unpack_node(c, v, cursor));
            return out;
          },
      },
      k.node());
}

// ---------------------------------------------------------------------------
// Expression grammar.

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_hyper(const Hyper& h) {
  return h.trainable ? format_number(h.value) : "fixed(" + format_number(h.value) + ")";
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  KernelSpec parse() {
    KernelSpec k = parse_kernel();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return k;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw SchemaError("kernel expression: " + msg + " at offset " + std::to_string(pos_) +
                      " in \"" + std::string(text_) + "\"");
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  void expect(char c) {
    if (!peek(c)) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string identifier() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) {
      ++pos_;
    }
    if (start == pos_) fail("expected identifier");
    return std::string(text_.substr(start, pos_ - start));
  }

  long integer() {
    const std::size_t start = pos_;
    const double v = number();
    if (v != std::floor(v) || std::abs(v) > 1e9) {
      pos_ = start;
      fail("expected an integer");
    }
    return static_cast<long>(v);
  }

  double number() {
    skip_ws();
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.' ||
            text_[pos_] == '-' || text_[pos_] == '+')) {
      ++pos_;
    }
    const std::string tok(text_.substr(start, pos_ - start));
    if (tok.empty()) fail("expected number");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) fail("malformed number '" + tok + "'");
    return v;
  }

  bool at_fixed() {
    skip_ws();
    return text_.substr(pos_, 5) == "fixed";
  }

  Hyper scalar(bool trainable = true) {
    if (at_fixed()) {
      identifier();
      expect('(');
      Hyper h = scalar(false);
      expect(')');
      return h;
    }
    return Hyper{number(), trainable};
  }

  // Either a scalar (possibly fixed) or a bracketed list.
  std::vector<Hyper> scalar_or_list(bool trainable = true) {
    if (at_fixed()) {
      identifier();
      expect('(');
      auto out = scalar_or_list(false);
      expect(')');
      return out;
    }
    if (peek('[')) {
      ++pos_;
      std::vector<Hyper> out;
      if (!peek(']')) {
        do {
          Hyper h = scalar(trainable);
          out.push_back(h);
        } while (peek(',') && (++pos_, true));
      }
      expect(']');
      return out;
    }
    return {scalar(trainable)};
  }

  struct Arg {
    std::string key;  // empty for positional
    std::size_t offset;
  };

  KernelSpec parse_kernel() {
    const std::string name = identifier();
    expect('(');
    KernelSpec::Node node = ConstantKernel{};
    if (name == "sum") {
      SumKernel s;
      if (!peek(')')) {
        do {
          s.children.push_back(parse_kernel());
        } while (peek(',') && (++pos_, true));
      }
      node = std::move(s);
    } else if (name == "constant") {
      ConstantKernel c;
      bool seen = false;
      parse_args([&](const std::string& key) {
        if (!key.empty() && key != "c") fail("unknown constant() argument '" + key + "'");
        c.c = scalar();
        seen = true;
      });
      if (!seen) fail("constant() needs a value");
      node = c;
    } else if (name == "se") {
      SqExpKernel s;
      s.amplitude = Hyper{1.0, true};
      s.lengthscale = Hyper{1.0, true};
      parse_args([&](const std::string& key) {
        if (key == "a" || key == "amplitude") s.amplitude = scalar();
        else if (key == "l" || key == "lengthscale") s.lengthscale = scalar();
        else fail("unknown se() argument '" + key + "'");
      });
      node = s;
    } else if (name == "ard") {
      ArdKernel a;
      a.theta = Hyper{1.0, true};
      long dim = -1;
      parse_args([&](const std::string& key) {
        if (key == "theta") a.theta = scalar();
        else if (key == "l" || key == "lengthscales") a.lengthscales = scalar_or_list();
        else if (key == "dim") dim = integer();
        else fail("unknown ard() argument '" + key + "'");
      });
      if (a.lengthscales.empty()) a.lengthscales.push_back(Hyper{1.0, true});
      if (dim > 0) {
        if (a.lengthscales.size() == 1) {
          a.lengthscales.assign(static_cast<std::size_t>(dim), a.lengthscales.front());
        } else if (static_cast<long>(a.lengthscales.size()) != dim) {
          fail("ard() dim does not match the lengthscale list");
        }
      }
      node = a;
    } else if (name == "poly") {
      PolynomialKernel p;
      parse_args([&](const std::string& key) {
        if (!key.empty() && key != "degree") fail("unknown poly() argument '" + key + "'");
        p.degree = static_cast<int>(integer());
      });
      node = p;
    } else {
      fail("unknown kernel '" + name + "'");
    }
    expect(')');
    try {
      return KernelSpec(std::move(node));
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
  }

  // Calls on_arg(key) for each argument with the cursor placed at its value.
  template <class F>
  void parse_args(F&& on_arg) {
    if (peek(')')) return;
    do {
      skip_ws();
      std::string key;
      const std::size_t save = pos_;
      if (pos_ < text_.size() && std::isalpha(static_cast<unsigned char>(text_[pos_])) &&
          !at_fixed()) {
        key = identifier();
        if (!peek('=')) {
          pos_ = save;
          key.clear();
        } else {
          ++pos_;
        }
      }
      on_arg(key);
    } while (peek(',') && (++pos_, true));
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

void format_node(const KernelSpec& k, std::ostringstream& os) {
  std::visit(Overloaded{
                 [&](const ConstantKernel& c) { os << "constant(" << format_hyper(c.c) << ")"; },
                 [&](const SqExpKernel& s) {
                   os << "se(a=" << format_hyper(s.amplitude)
                      << ", l=" << format_hyper(s.lengthscale) << ")";
                 },
                 [&](const ArdKernel& a) {
                   os << "ard(theta=" << format_hyper(a.theta) << ", l=[";
                   for (std::size_t i = 0; i < a.lengthscales.size(); ++i) {
                     if (i) os << ", ";
                     os << format_hyper(a.lengthscales[i]);
                   }
                   os << "])";
                 },
                 [&](const PolynomialKernel& p) { os << "poly(degree=" << p.degree << ")"; },
                 [&](const SumKernel& s) {
                   os << "sum(";
                   for (std::size_t i = 0; i < s.children.size(); ++i) {
                     if (i) os << ", ";
                     format_node(s.children[i], os);
                   }
                   os << ")";
                 },
             },
             k.node());
}

}  // namespace

bool SumKernel::operator==(const SumKernel& other) const { return children == other.children; }

KernelSpec::KernelSpec(Node node) : node_(std::move(node)) {
  validate(node_, 1);
  if (input_dim() == -2) throw InvalidArgument("sum kernel children disagree on input dimension");
}

KernelSpec KernelSpec::constant(double c, bool trainable) {
  return KernelSpec(ConstantKernel{Hyper{c, trainable}});
}

KernelSpec KernelSpec::sq_exp(double amplitude, double lengthscale, bool amplitude_trainable,
                              bool lengthscale_trainable) {
  return KernelSpec(SqExpKernel{Hyper{amplitude, amplitude_trainable},
                                Hyper{lengthscale, lengthscale_trainable}});
}

KernelSpec KernelSpec::ard(double theta, std::vector<double> lengthscales, bool theta_trainable,
                           bool lengthscales_trainable) {
  ArdKernel a;
  a.theta = Hyper{theta, theta_trainable};
  for (double l : lengthscales) a.lengthscales.push_back(Hyper{l, lengthscales_trainable});
  return KernelSpec(std::move(a));
}

KernelSpec KernelSpec::polynomial(int degree) { return KernelSpec(PolynomialKernel{degree}); }

KernelSpec KernelSpec::sum(std::vector<KernelSpec> children) {
  return KernelSpec(SumKernel{std::move(children)});
}

Index KernelSpec::input_dim() const {
  return std::visit(Overloaded{
                        [](const ArdKernel& a) { return static_cast<Index>(a.lengthscales.size()); },
                        [](const SumKernel& s) {
                          Index dim = -1;
                          for (const auto& c : s.children) {
                            const Index d = c.input_dim();
                            if (d == -2) return Index{-2};
                            if (d >= 0) {
                              if (dim >= 0 && dim != d) return Index{-2};
                              dim = d;
                            }
                          }
                          return dim;
                        },
                        [](const auto&) { return Index{-1}; },
                    },
                    node_);
}

Index KernelSpec::num_params() const { return pack_params(*this).size(); }

int KernelSpec::depth() const {
  if (const auto* s = std::get_if<SumKernel>(&node_)) {
    int d = 0;
    for (const auto& c : s->children) d = std::max(d, c.depth());
    return d + 1;
  }
  return 1;
}

double eval(const KernelSpec& k, const Vector& x, const Vector& x2) {
  return eval(k, RowView(x.transpose()), RowView(x2.transpose()));
}

double eval(const KernelSpec& k, RowView x, RowView x2) {
  check_dims(k, x.size(), x2.size());
  return eval_node(k, x, x2);
}

Matrix gram(const KernelSpec& k, const Matrix& X, const Matrix& X2) {
  check_dims(k, X.cols(), X2.cols());
  Matrix K(X.rows(), X2.rows());
  const bool same = &X == &X2;
  for (Index j = 0; j < X2.rows(); ++j) {
    for (Index i = same ? j : 0; i < X.rows(); ++i) {
      K(i, j) = eval_node(k, X.row(i), X2.row(j));
      if (same) K(j, i) = K(i, j);
    }
  }
  return K;
}

Vector gram_diag(const KernelSpec& k, const Matrix& X) {
  check_dims(k, X.cols(), X.cols());
  Vector d(X.rows());
  for (Index i = 0; i < X.rows(); ++i) d(i) = eval_node(k, X.row(i), X.row(i));
  return d;
}

void gram_backward(const KernelSpec& k, const Matrix& X, const Matrix& X2, const Matrix& adj,
                   Matrix* dX, Matrix* dX2, Eigen::Ref<Vector> dparams) {
  check_dims(k, X.cols(), X2.cols());
  if (adj.rows() != X.rows() || adj.cols() != X2.rows()) {
    throw InvalidArgument("gram_backward: adjoint shape mismatch");
  }
  if (dparams.size() != k.num_params()) {
    throw InvalidArgument("gram_backward: parameter gradient has wrong length");
  }
  const Index dim = X.cols();
  Eigen::RowVectorXd gx(dim), gx2(dim);
  for (Index i = 0; i < X.rows(); ++i) {
    gx.setZero();
    for (Index j = 0; j < X2.rows(); ++j) {
      const double w = adj(i, j);
      if (w == 0.0) continue;
      gx2.setZero();
      Index cursor = 0;
      grad_node(k, X.row(i), X2.row(j), w, dX ? gx.data() : nullptr, dX2 ? gx2.data() : nullptr,
                dparams.data(), cursor);
      if (dX2) dX2->row(j) += gx2;
    }
    if (dX) dX->row(i) += gx;
  }
}

void gram_diag_backward(const KernelSpec& k, const Matrix& X, const Vector& adj_diag,
                        Eigen::Ref<Vector> dparams) {
  if (adj_diag.size() != X.rows()) throw InvalidArgument("gram_diag_backward: adjoint length");
  if (dparams.size() != k.num_params()) {
    throw InvalidArgument("gram_diag_backward: parameter gradient has wrong length");
  }
  for (Index i = 0; i < X.rows(); ++i) {
    if (adj_diag(i) == 0.0) continue;
    Index cursor = 0;
    grad_node(k, X.row(i), X.row(i), adj_diag(i), nullptr, nullptr, dparams.data(), cursor);
  }
}

Vector pack_params(const KernelSpec& k) {
  std::vector<double> out;
  pack_node(k, out);
  return Eigen::Map<Vector>(out.data(), static_cast<Index>(out.size()));
}

KernelSpec unpack_params(const KernelSpec& k, const Vector& packed) {
  const Index n = k.num_params();
  if (packed.size() != n) {
    throw InvalidArgument("unpack_params: expected " + std::to_string(n) + " values, got " +
                          std::to_string(packed.size()));
  }
  Index cursor = 0;
  return KernelSpec(unpack_node(k, packed, cursor));
}

KernelSpec broadcast_to_dim(const KernelSpec& k, Index dim) {
  return std::visit(
      Overloaded{
          [&](const ArdKernel& a) {
            if (static_cast<Index>(a.lengthscales.size()) == dim) return k;
            if (a.lengthscales.size() != 1) {
              throw InvalidArgument("ARD kernel has " + std::to_string(a.lengthscales.size()) +
                                    " lengthscales but the data has " + std::to_string(dim) +
                                    " features");
            }
            ArdKernel out = a;
            out.lengthscales.assign(static_cast<std::size_t>(dim), a.lengthscales.front());
            return KernelSpec(out);
          },
          [&](const SumKernel& s) {
            SumKernel out;
            for (const auto& c : s.children) out.children.push_back(broadcast_to_dim(c, dim));
            return KernelSpec(out);
          },
          [&](const auto&) { return k; },
      },
      k.node());
}

KernelSpec parse_kernel(std::string_view text) { return Parser(text).parse(); }

std::string format_kernel(const KernelSpec& k) {
  std::ostringstream os;
  format_node(k, os);
  return os.str();
}

}  // namespace sevgp
