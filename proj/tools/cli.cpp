#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "sevgp/data.hpp"
#include "sevgp/errors.hpp"
#include "sevgp/experiments.hpp"
#include "sevgp/training.hpp"

namespace sevgp::cli {

namespace {

using json = nlohmann::json;

std::string type_error(const std::string& key, const char* want) {
  return "config key '" + key + "' must be " + want;
}

double as_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw SchemaError(type_error(key, "a number"));
  return v.get<double>();
}

long as_integer(const json& v, const std::string& key, long min = 0) {
  if (!v.is_number_integer()) throw SchemaError(type_error(key, "an integer"));
  const long x = v.get<long>();
  if (x < min) throw SchemaError("config key '" + key + "' must be >= " + std::to_string(min));
  return x;
}

double as_positive(const json& v, const std::string& key) {
  const double x = as_number(v, key);
  if (!(x > 0.0)) throw SchemaError("config key '" + key + "' must be positive");
  return x;
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw SchemaError(type_error(key, "a string"));
  return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw SchemaError(type_error(key, "a boolean"));
  return v.get<bool>();
}

Variant as_variant(const json& v, const std::string& key) {
  if (v.is_number_integer()) return parse_variant(std::to_string(v.get<long>()));
  return parse_variant(as_string(v, key));
}

// ---------------------------------------------------------------------------
// Model files: the core model document plus the preprocessing needed to map
// raw inputs in and predictions out.

struct StoredModel {
  SevgpModel model;
  std::optional<Standardization> preprocessing;
  std::vector<std::string> feature_names;
  std::string target;
};

json vector_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector json_vector(const json& j, Index n, const char* what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != n) {
    throw SchemaError(std::string("preprocessing.") + what + " has the wrong length");
  }
  Vector v(n);
  for (Index i = 0; i < n; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

void save_stored(const StoredModel& s, const std::filesystem::path& file) {
  json doc = json::parse(model_to_json(s.model));
  if (s.preprocessing) {
    doc["preprocessing"] = {{"x_mean", vector_json(s.preprocessing->x_mean)},
                            {"x_sd", vector_json(s.preprocessing->x_sd)},
                            {"y_mean", s.preprocessing->y_mean},
                            {"y_sd", s.preprocessing->y_sd}};
  } else {
    doc["preprocessing"] = nullptr;
  }
  doc["feature_names"] = s.feature_names;
  doc["target"] = s.target;
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out << doc.dump(1) << '\n';
}

StoredModel load_stored(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open model file " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  StoredModel s;
  s.model = model_from_json(buf.str());
  const json doc = json::parse(buf.str());
  try {
    const Index dim = s.model.input_dim();
    if (doc.contains("preprocessing") && !doc["preprocessing"].is_null()) {
      const json& p = doc["preprocessing"];
      Standardization st;
      st.x_mean = json_vector(p.at("x_mean"), dim, "x_mean");
      st.x_sd = json_vector(p.at("x_sd"), dim, "x_sd");
      st.y_mean = p.at("y_mean").get<double>();
      st.y_sd = p.at("y_sd").get<double>();
      s.preprocessing = st;
    }
    if (doc.contains("feature_names")) s.feature_names = doc["feature_names"].get<std::vector<std::string>>();
    if (doc.contains("target")) s.target = doc["target"].get<std::string>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed model file: ") + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------

std::ofstream open_csv(const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  out.precision(17);
  return out;
}

void report_warnings(const Dataset& d, std::ostream& err) {
  for (const auto& w : d.warnings) err << "warning: " << w << '\n';
}

KernelSpec default_coeff_kernel() {
  return KernelSpec::sum({KernelSpec::constant(1.0, false), KernelSpec::ard(2.0, {1.0}, false, true)});
}

std::optional<KernelSpec> full_prior_for(const RunConfig& c, Variant v) {
  if (c.full_prior_kernel) return parse_kernel(*c.full_prior_kernel);
  if (v != Variant::V41) {
    throw SchemaError("variant " + to_string(v) + " needs full_prior_kernel");
  }
  return std::nullopt;
}

const std::string& require_target(const RunConfig& c) {
  if (!c.target_column) throw SchemaError("target_column is required with a CSV dataset");
  return *c.target_column;
}

int cmd_soundness(const RunConfig& c, std::ostream& out) {
  SoundnessConfig s;
  if (c.sizes) s.sizes = *c.sizes;
  if (c.synthetic_size) s.sizes = {*c.synthetic_size};
  if (c.variant) s.variants = {*c.variant};
  if (c.num_inducing) s.num_inducing = *c.num_inducing;
  if (c.augmentation) s.augmentation = *c.augmentation;
  if (c.iterations) s.iterations = *c.iterations;
  if (c.learning_rate) s.learning_rate = *c.learning_rate;
  if (c.optimizer) s.optimizer = parse_optimizer(*c.optimizer);
  s.lambda = c.lambda;
  s.seed = c.seed;
  s.progress_every = c.progress_every;
  const SoundnessResult r = run_soundness(s);
  write_soundness(r, c.out_dir);
  out.precision(6);
  for (const auto& run : r.runs) {
    out << "n=" << run.n << " variant=" << to_string(run.variant) << " rmse_grid=" << run.rmse_grid;
    if (run.rmse_outside) out << " rmse_outside=" << *run.rmse_outside;
    out << '\n';
  }
  return kOk;
}

int cmd_bench(const RunConfig& c, std::ostream& out, std::ostream& err) {
  if (!c.dataset) throw SchemaError("bench needs a dataset");
  const Dataset d = load_csv(*c.dataset, require_target(c));
  report_warnings(d, err);
  BenchConfig b;
  b.dataset_name = c.dataset->stem().string();
  if (c.variant) b.variant = *c.variant;
  if (c.folds) b.folds = *c.folds;
  if (c.num_inducing) b.num_inducing = *c.num_inducing;
  if (c.batch_size) b.batch_size = *c.batch_size;
  if (c.augmentation) b.augmentation = *c.augmentation;
  if (c.iterations) b.iterations = *c.iterations;
  if (c.learning_rate) b.learning_rate = *c.learning_rate;
  if (c.optimizer) b.optimizer = parse_optimizer(*c.optimizer);
  if (c.kernel) b.coeff_kernel = parse_kernel(*c.kernel);
  b.full_prior_kernel = full_prior_for(c, b.variant);
  b.lambda = c.lambda;
  b.seed = c.seed;
  b.jobs = c.jobs;
  b.progress_every = c.progress_every;
  const BenchResult r = run_bench(d, b);
  const auto file = c.out_dir / ("bench_" + b.dataset_name + ".csv");
  write_bench(r, b, file);
  out.precision(6);
  out << b.dataset_name << " variant=" << to_string(b.variant) << " mse=" << r.mse_mean << " +- " << r.mse_sd
      << " stability=" << r.stability_mean << " +- " << r.stability_sd << '\n';
  return kOk;
}

std::filesystem::path model_path(const RunConfig& c) { return c.model ? *c.model : c.out_dir / "model.json"; }

int cmd_fit(const RunConfig& c, std::ostream& out, std::ostream& err) {
  if (c.dataset.has_value() == c.synthetic_size.has_value()) {
    throw SchemaError("fit needs exactly one of dataset or synthetic_size");
  }
  Dataset d = c.dataset ? load_csv(*c.dataset, require_target(c)) : gen_synthetic(*c.synthetic_size, c.seed);
  report_warnings(d, err);
  StoredModel stored;
  stored.feature_names = d.feature_names;
  stored.target = d.target_name;
  if (c.standardize.value_or(true)) {
    stored.preprocessing = fit_standardization(d);
    d = apply_standardization(*stored.preprocessing, d);
    report_warnings(d, err);
  }

  ModelOptions opt;
  opt.variant = c.variant.value_or(Variant::V41);
  opt.coeff_kernel = c.kernel ? parse_kernel(*c.kernel) : default_coeff_kernel();
  opt.full_prior_kernel = full_prior_for(c, opt.variant);
  if (c.num_inducing) opt.num_inducing = *c.num_inducing;
  if (c.bias) opt.include_bias_column = *c.bias;
  if (c.sigma2) opt.sigma2 = *c.sigma2;
  const SevgpModel init = init_model(d.X, opt, c.seed);

  TrainConfig t;
  if (c.optimizer) t.optimizer = parse_optimizer(*c.optimizer);
  if (c.learning_rate) t.learning_rate = *c.learning_rate;
  if (c.iterations) t.iterations = *c.iterations;
  if (c.batch_size) t.batch_size = *c.batch_size;
  if (c.augmentation) t.augmentation = *c.augmentation;
  t.lambda = c.lambda;
  t.seed = c.seed + 1;
  t.progress_every = c.progress_every;
  const FitResult r = fit(init, d, t);
  stored.model = r.model;

  const auto file = model_path(c);
  save_stored(stored, file);
  auto trace = open_csv(c.out_dir / "fit_trace.csv");
  trace << "iteration,objective\n";
  for (std::size_t i = 0; i < r.trace.size(); ++i) trace << i + 1 << ',' << r.trace[i] << '\n';
  out.precision(6);
  out << "saved " << file.string() << " objective=" << (r.trace.empty() ? 0.0 : r.trace.back())
      << " sigma2=" << r.model.sigma2 << '\n';
  return kOk;
}

struct PreparedInputs {
  StoredModel stored;
  Matrix X;  ///< in model units
};

PreparedInputs prepare_inputs(const RunConfig& c, std::ostream& err) {
  if (!c.dataset) throw SchemaError("a dataset is required");
  PreparedInputs p;
  p.stored = load_stored(model_path(c));
  const std::string ignore = c.target_column.value_or(p.stored.target);
  Dataset d = load_features_csv(*c.dataset, ignore);
  report_warnings(d, err);
  if (d.num_features() != p.stored.model.input_dim()) {
    throw SchemaError("dataset has " + std::to_string(d.num_features()) + " feature column(s), model expects " +
                      std::to_string(p.stored.model.input_dim()));
  }
  if (!p.stored.feature_names.empty() && d.feature_names != p.stored.feature_names) {
    err << "warning: feature names differ from the ones the model was fitted on\n";
  }
  if (p.stored.preprocessing) d = apply_standardization(*p.stored.preprocessing, d);
  p.X = std::move(d.X);
  return p;
}

int cmd_predict(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const PreparedInputs p = prepare_inputs(c, err);
  const Marginals mg = predict_y_marginals(p.stored.model, p.X);
  const double shift = p.stored.preprocessing ? p.stored.preprocessing->y_mean : 0.0;
  const double scale = p.stored.preprocessing ? p.stored.preprocessing->y_sd : 1.0;
  const auto file = c.out_dir / "predictions.csv";
  auto csv = open_csv(file);
  csv << "row,mean,variance\n";
  for (Index i = 0; i < p.X.rows(); ++i) {
    csv << i << ',' << mg.mean(i) * scale + shift << ',' << mg.var(i) * scale * scale << '\n';
  }
  out << "wrote " << p.X.rows() << " prediction(s) to " << file.string() << '\n';
  return kOk;
}

// Contributions stay in model units so that they add up to the prediction
// column exactly.
int cmd_explain(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const PreparedInputs p = prepare_inputs(c, err);
  const SevgpModel& m = p.stored.model;
  std::vector<std::string> names;
  for (const auto& b : m.blocks) {
    const Index f = b.feature_index - (m.include_bias_column ? 1 : 0);
    if (f < 0) {
      names.push_back("bias");
    } else if (f < static_cast<Index>(p.stored.feature_names.size())) {
      names.push_back(p.stored.feature_names[static_cast<std::size_t>(f)]);
    } else {
      names.push_back("x" + std::to_string(f));
    }
  }
  const auto file = c.out_dir / "explanations.csv";
  auto csv = open_csv(file);
  csv << "row,prediction";
  for (const auto& n : names) csv << ",contrib_" << n;
  for (const auto& n : names) csv << ",coef_" << n;
  for (const auto& n : names) csv << ",coef_var_" << n;
  csv << '\n';
  for (Index i = 0; i < p.X.rows(); ++i) {
    const std::vector<Contribution> parts = explain(m, p.X.row(i).transpose());
    double total = 0.0;
    for (const auto& part : parts) total += part.contribution;
    csv << i << ',' << total;
    for (const auto& part : parts) csv << ',' << part.contribution;
    for (const auto& part : parts) csv << ',' << part.coeff_mean;
    for (const auto& part : parts) csv << ',' << part.coeff_var;
    csv << '\n';
  }
  out << "wrote " << p.X.rows() << " explanation(s) to " << file.string() << '\n';
  return kOk;
}

void add_shared_options(CLI::App& sub, RunConfig& flags, std::string& config_file, std::string& variant) {
  sub.add_option("--config", config_file, "JSON config file; flags override its values")->check(CLI::ExistingFile);
  sub.add_option("--seed", flags.seed, "Random seed");
  sub.add_option("--out-dir", flags.out_dir, "Output directory");
  sub.add_option("--variant", variant, "Objective variant")->check(CLI::IsMember({"41", "42", "43", "4.1", "4.2", "4.3"}));
  sub.add_option("--dataset", flags.dataset, "Delimited file with a header row");
  sub.add_option("--target-column", flags.target_column, "Target column name");
  sub.add_option("--folds", flags.folds, "Cross-validation folds")->check(CLI::PositiveNumber);
  sub.add_option("--iterations", flags.iterations, "Optimizer steps")->check(CLI::NonNegativeNumber);
  sub.add_option("--model", flags.model, "Model file (written by fit, read by predict/explain)");
  sub.add_option("--jobs", flags.jobs, "Folds trained concurrently")->check(CLI::PositiveNumber);
  sub.add_option("--progress", flags.progress_every, "Print progress every N steps to stderr");
}

// Overlays explicitly given flags on top of the file config.
void overlay(RunConfig& base, const RunConfig& flags, const CLI::App& sub, const std::string& variant) {
  auto given = [&](const char* name) { return sub.count(name) > 0; };
  if (given("--seed")) base.seed = flags.seed;
  if (given("--out-dir")) base.out_dir = flags.out_dir;
  if (given("--variant")) base.variant = parse_variant(variant);
  if (given("--dataset")) base.dataset = flags.dataset;
  if (given("--target-column")) base.target_column = flags.target_column;
  if (given("--folds")) base.folds = flags.folds;
  if (given("--iterations")) base.iterations = flags.iterations;
  if (given("--model")) base.model = flags.model;
  if (given("--jobs")) base.jobs = flags.jobs;
  if (given("--progress")) base.progress_every = flags.progress_every;
}

}  // namespace

RunConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw SchemaError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : doc.items()) {
    if (key == "command") c.command = as_string(v, key);
    else if (key == "dataset") c.dataset = as_string(v, key);
    else if (key == "synthetic_size") c.synthetic_size = as_integer(v, key, 2);
    else if (key == "target_column") c.target_column = as_string(v, key);
    else if (key == "variant") c.variant = as_variant(v, key);
    else if (key == "out_dir") c.out_dir = as_string(v, key);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(as_integer(v, key));
    else if (key == "model") c.model = as_string(v, key);
    else if (key == "folds") c.folds = as_integer(v, key, 2);
    else if (key == "iterations") c.iterations = as_integer(v, key);
    else if (key == "learning_rate") c.learning_rate = as_positive(v, key);
    else if (key == "optimizer") c.optimizer = as_string(v, key);
    else if (key == "batch_size") c.batch_size = as_integer(v, key, 1);
    else if (key == "augmentation") c.augmentation = as_integer(v, key);
    else if (key == "lambda") {
      c.lambda = as_number(v, key);
      if (*c.lambda < 0.0) throw SchemaError("config key 'lambda' must be >= 0");
    }
    else if (key == "num_inducing") c.num_inducing = as_integer(v, key, 1);
    else if (key == "kernel") c.kernel = as_string(v, key);
    else if (key == "full_prior_kernel") c.full_prior_kernel = as_string(v, key);
    else if (key == "sigma2") c.sigma2 = as_positive(v, key);
    else if (key == "bias") c.bias = as_bool(v, key);
    else if (key == "standardize") c.standardize = as_bool(v, key);
    else if (key == "sizes") {
      if (!v.is_array() || v.empty()) throw SchemaError(type_error(key, "a non-empty array of integers"));
      std::vector<Index> sizes;
      for (const auto& s : v) sizes.push_back(as_integer(s, key, 2));
      c.sizes = sizes;
    }
    else if (key == "jobs") c.jobs = static_cast<unsigned>(as_integer(v, key, 1));
    else if (key == "progress_every") c.progress_every = as_integer(v, key);
    else throw SchemaError("unknown config key '" + key + "'");
  }
  // Kernel expressions are checked up front, before any work starts.
  if (c.kernel) parse_kernel(*c.kernel);
  if (c.full_prior_kernel) parse_kernel(*c.full_prior_kernel);
  if (c.optimizer) parse_optimizer(*c.optimizer);
  return c;
}

RunConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw SchemaError("cannot open config " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

int run_command(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    if (config.command == "soundness") return cmd_soundness(config, out);
    if (config.command == "bench") return cmd_bench(config, out, err);
    if (config.command == "fit") return cmd_fit(config, out, err);
    if (config.command == "predict") return cmd_predict(config, out, err);
    if (config.command == "explain") return cmd_explain(config, out, err);
    throw SchemaError("unknown command '" + config.command + "'");
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const NotPositiveDefinite& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const Error& e) {
    // Schema, data and argument errors all trace back to the inputs.
    err << "error: " << e.what() << '\n';
    return kSchema;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kSchema;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kFailure;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Self-explaining variational Gaussian processes"};
  app.require_subcommand(1);
  RunConfig flags;
  std::string config_file, variant;
  const std::vector<std::pair<const char*, const char*>> commands{
      {"soundness", "Posterior soundness on the synthetic quadratic"},
      {"bench", "k-fold cross-validated MSE and coefficient stability"},
      {"fit", "Fit a model and save it"},
      {"predict", "Predictive mean and variance per row"},
      {"explain", "Per-feature contributions per row"}};
  for (const auto& [name, help] : commands) add_shared_options(*app.add_subcommand(name, help), flags, config_file, variant);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kSchema;
  }
  const CLI::App* sub = app.get_subcommands().front();
  RunConfig config;
  try {
    if (!config_file.empty()) config = load_config(config_file);
    if (!config.command.empty() && config.command != sub->get_name()) {
      throw SchemaError("config is for '" + config.command + "', not '" + sub->get_name() + "'");
    }
    config.command = sub->get_name();
    overlay(config, flags, *sub, variant);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kSchema;
  }
  return run_command(config, out, err);
}

}  // namespace sevgp::cli
