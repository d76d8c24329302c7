#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "sevgp/model.hpp"

namespace sevgp::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kSchema = 2, kNumerical = 3 };

/// Everything a subcommand needs. Unset optionals fall back to the
/// command's own defaults.
struct RunConfig {
  std::string command;
  std::optional<std::filesystem::path> dataset;
  std::optional<Index> synthetic_size;
  std::optional<std::string> target_column;
  std::optional<Variant> variant;
  std::filesystem::path out_dir = ".";
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> model;

  std::optional<Index> folds;
  std::optional<long> iterations;
  std::optional<double> learning_rate;
  std::optional<std::string> optimizer;
  std::optional<Index> batch_size;
  std::optional<Index> augmentation;
  std::optional<double> lambda;
  std::optional<Index> num_inducing;
  std::optional<std::string> kernel;
  std::optional<std::string> full_prior_kernel;
  std::optional<double> sigma2;
  std::optional<bool> bias;
  std::optional<bool> standardize;
  std::optional<std::vector<Index>> sizes;
  unsigned jobs = 1;
  long progress_every = 0;
};

/// Reads a JSON object; unknown keys and wrong types throw SchemaError.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::filesystem::path& file);

/// Runs one subcommand. Returns the process exit code.
int run_command(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Full argv entry point: soundness, bench, fit, predict, explain.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sevgp::cli
