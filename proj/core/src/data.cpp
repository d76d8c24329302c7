#include "sevgp/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "sevgp/errors.hpp"

namespace sevgp {
namespace {

char detect_delimiter(const std::string& header) {
  const std::pair<char, long> counts[] = {
      {',', std::count(header.begin(), header.end(), ',')},
      {';', std::count(header.begin(), header.end(), ';')},
      {'\t', std::count(header.begin(), header.end(), '\t')},
  };
  const auto* best = std::max_element(std::begin(counts), std::end(counts),
                                      [](const auto& a, const auto& b) { return a.second < b.second; });
  return best->second > 0 ? best->first : ',';
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) out.push_back(trim(field));
  if (!line.empty() && line.back() == delim) out.emplace_back();
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const auto res = std::from_chars(begin, s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size() && std::isfinite(out);
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  Index dropped = 0;
};

Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());
  Table t;
  std::string line;
  while (std::getline(in, line) && trim(line).empty()) {
  }
  if (!in && line.empty()) throw DataError("data file " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const char delim = detect_delimiter(line);
  t.header = split(line, delim);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split(line, delim);
    std::vector<double> row(t.header.size());
    bool ok = fields.size() == t.header.size();
    for (std::size_t i = 0; ok && i < fields.size(); ++i) ok = parse_double(fields[i], row[i]);
    if (ok) t.rows.push_back(std::move(row));
    else ++t.dropped;
  }
  if (t.rows.empty()) throw DataError("data file " + path.string() + " has no usable rows");
  return t;
}

Dataset table_to_dataset(const Table& t, long target) {
  Dataset d;
  const Index n = static_cast<Index>(t.rows.size());
  const Index cols = static_cast<Index>(t.header.size());
  const Index k = target >= 0 ? cols - 1 : cols;
  d.X.resize(n, k);
  d.y = Vector::Zero(n);
  for (Index c = 0, f = 0; c < cols; ++c) {
    if (c == target) {
      d.target_name = t.header[static_cast<std::size_t>(c)];
      for (Index i = 0; i < n; ++i) d.y(i) = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
      continue;
    }
    d.feature_names.push_back(t.header[static_cast<std::size_t>(c)]);
    for (Index i = 0; i < n; ++i) d.X(i, f) = t.rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    ++f;
  }
  d.dropped_rows = t.dropped;
  if (t.dropped > 0) {
    d.warnings.push_back("dropped " + std::to_string(t.dropped) + " malformed row(s)");
  }
  return d;
}

}  // namespace

std::vector<Bounds> Dataset::bounds() const {
  std::vector<Bounds> b;
  for (Index c = 0; c < X.cols(); ++c) b.emplace_back(X.col(c).minCoeff(), X.col(c).maxCoeff());
  return b;
}

Dataset Dataset::subset(const std::vector<Index>& rows) const {
  Dataset d;
  d.X.resize(static_cast<Index>(rows.size()), X.cols());
  d.y.resize(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    d.X.row(static_cast<Index>(i)) = X.row(rows[i]);
    d.y(static_cast<Index>(i)) = y(rows[i]);
  }
  d.feature_names = feature_names;
  d.target_name = target_name;
  d.standardization = standardization;
  return d;
}

void validate(const Dataset& d) {
  if (d.X.rows() != d.y.size()) throw DataError("dataset: X and y have different row counts");
  if (d.X.rows() < 2) throw DataError("dataset needs at least two rows");
  if (!d.X.allFinite() || !d.y.allFinite()) throw DataError("dataset has non-finite entries");
}

Dataset gen_synthetic(Index n, std::uint64_t seed) {
  if (n < 2) throw InvalidArgument("gen_synthetic: need n >= 2");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-2.0, 2.0);
  std::normal_distribution<double> noise(0.0, 0.5);
  Dataset d;
  d.X.resize(n, 1);
  d.y.resize(n);
  for (Index i = 0; i < n; ++i) {
    const double x = ux(rng);
    d.X(i, 0) = x;
    d.y(i) = 0.25 * x * x + noise(rng);
  }
  d.feature_names = {"x"};
  return d;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& target_column) {
  const Table t = read_table(path);
  const auto it = std::find(t.header.begin(), t.header.end(), target_column);
  if (it == t.header.end()) {
    throw DataError("column '" + target_column + "' not found in " + path.string());
  }
  Dataset d = table_to_dataset(t, static_cast<long>(it - t.header.begin()));
  validate(d);
  return d;
}

Dataset load_features_csv(const std::filesystem::path& path, const std::string& ignore_column) {
  Table t = read_table(path);
  const auto it = std::find(t.header.begin(), t.header.end(), ignore_column);
  const long skip = (ignore_column.empty() || it == t.header.end())
                        ? -1
                        : static_cast<long>(it - t.header.begin());
  Dataset d = table_to_dataset(t, skip);
  if (skip < 0) d.target_name.clear();
  return d;
}

Standardization fit_standardization(const Dataset& train) {
  validate(train);
  Standardization s;
  const double n = static_cast<double>(train.size());
  s.x_mean = train.X.colwise().mean().transpose();
  s.x_sd.resize(train.num_features());
  for (Index c = 0; c < train.num_features(); ++c) {
    const double sd =
        std::sqrt((train.X.col(c).array() - s.x_mean(c)).square().sum() / (n - 1.0));
    if (sd > 0.0) {
      s.x_sd(c) = sd;
    } else {
      s.x_mean(c) = 0.0;
      s.x_sd(c) = 1.0;
    }
  }
  s.y_mean = train.y.mean();
  const double ysd = std::sqrt((train.y.array() - s.y_mean).square().sum() / (n - 1.0));
  s.y_sd = ysd > 0.0 ? ysd : 1.0;
  if (!(ysd > 0.0)) s.y_mean = 0.0;
  return s;
}

Dataset apply_standardization(const Standardization& s, const Dataset& d) {
  if (s.x_mean.size() != d.num_features()) {
    throw InvalidArgument("standardization fitted on a different number of features");
  }
  Dataset out = d;
  out.X = (d.X.rowwise() - s.x_mean.transpose()).array().rowwise() / s.x_sd.transpose().array();
  out.y = (d.y.array() - s.y_mean) / s.y_sd;
  out.standardization = s;
  for (Index c = 0; c < s.x_sd.size(); ++c) {
    if (s.x_sd(c) == 1.0 && s.x_mean(c) == 0.0 && d.X.col(c).size() > 0 &&
        d.X.col(c).maxCoeff() == d.X.col(c).minCoeff()) {
      const std::string name = c < static_cast<Index>(d.feature_names.size())
                                   ? d.feature_names[static_cast<std::size_t>(c)]
                                   : std::to_string(c);
      out.warnings.push_back("column '" + name + "' is constant; passed through unscaled");
    }
  }
  return out;
}

Dataset invert_standardization(const Dataset& d) {
  if (!d.standardization) return d;
  const Standardization& s = *d.standardization;
  Dataset out = d;
  out.X = (d.X.array().rowwise() * s.x_sd.transpose().array()).matrix().rowwise() +
          s.x_mean.transpose();
  out.y = d.y.array() * s.y_sd + s.y_mean;
  out.standardization.reset();
  return out;
}

Dataset standardize(const Dataset& train, const Dataset& apply_to) {
  return apply_standardization(fit_standardization(train), apply_to);
}

std::vector<std::vector<Index>> kfold(Index n, Index k, std::uint64_t seed) {
  if (k < 1) throw InvalidArgument("kfold: need at least one fold");
  if (k > n) throw InvalidArgument("kfold: more folds than rows");
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<Index>> folds(static_cast<std::size_t>(k));
  const Index base = n / k;
  const Index extra = n % k;
  Index pos = 0;
  for (Index f = 0; f < k; ++f) {
    const Index size = base + (f < extra ? 1 : 0);
    auto& fold = folds[static_cast<std::size_t>(f)];
    fold.assign(perm.begin() + pos, perm.begin() + pos + size);
    std::sort(fold.begin(), fold.end());
    pos += size;
  }
  return folds;
}

double mse(const Vector& pred, const Vector& y) {
  if (pred.size() != y.size()) throw InvalidArgument("mse: length mismatch");
  if (y.size() == 0) throw InvalidArgument("mse: empty input");
  return (pred - y).squaredNorm() / static_cast<double>(y.size());
}

StabilityResult stability(const Matrix& F, const Matrix& X, Index m) {
  if (F.rows() != X.rows()) throw InvalidArgument("stability: coefficient rows != input rows");
  if (m < 1) throw InvalidArgument("stability: need m >= 1");
  if (X.rows() <= m) throw InvalidArgument("stability: need more rows than neighbours");
  const Index n = X.rows();
  StabilityResult r;
  double total = 0.0;
  Index counted = 0;
  std::vector<std::pair<double, Index>> dist;
  dist.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    dist.clear();
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d2 = (X.row(i) - X.row(j)).squaredNorm();
      if (d2 > 0.0) dist.emplace_back(d2, j);
    }
    const Index take = std::min<Index>(m, static_cast<Index>(dist.size()));
    if (take < m) ++r.short_rows;
    if (take == 0) {
      ++r.isolated_rows;
      continue;
    }
    std::partial_sort(dist.begin(), dist.begin() + take, dist.end());
    double best = 0.0;
    for (Index t = 0; t < take; ++t) {
      const auto& [d2, j] = dist[static_cast<std::size_t>(t)];
      best = std::max(best, (F.row(i) - F.row(j)).norm() / std::sqrt(d2));
    }
    total += best;
    ++counted;
  }
  r.value = counted > 0 ? total / static_cast<double>(counted) : 0.0;
  return r;
}

StabilityResult stability(const std::function<Vector(const Vector&)>& coef_at, const Matrix& X,
                          Index m) {
  if (X.rows() == 0) throw InvalidArgument("stability: empty input");
  Vector first = coef_at(X.row(0).transpose());
  Matrix F(X.rows(), first.size());
  F.row(0) = first.transpose();
  for (Index i = 1; i < X.rows(); ++i) F.row(i) = coef_at(X.row(i).transpose()).transpose();
  return stability(F, X, m);
}

}  // namespace sevgp
