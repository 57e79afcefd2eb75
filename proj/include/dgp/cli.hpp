#pragma once

// Data ingestion, evaluation metrics, run reports and model snapshots for the
// command-line driver.

#include "dgp/model.hpp"
#include "dgp/trainer.hpp"

#include "json.hpp"

#include <iosfwd>
#include <optional>
#include <string>

namespace dgp::cli {

using Json = nlohmann::ordered_json;

struct CsvOptions {
  std::string target_column;  // header name or 0-based index; empty: last column
  char delimiter = ',';
  bool normalize_inputs = false;
};

/// Reads a header + numeric rows file. Errors name the offending line.
Dataset load_csv(const std::string& path, const CsvOptions& options = {});

/// Writes inputs (x1..xD) followed by the target column `y`, 17 significant digits.
void write_csv(const std::string& path, const Dataset& data);

struct Metrics {
  double nmse = 0.0;
  double test_vlb = 0.0;
};

/// nMSE = mean squared error / variance of test targets; test VLB = sum of
/// Gaussian ELL over the test set minus the model's KL to the prior.
Metrics evaluate(const DecoupledModel& model, const Dataset& test);

enum class Algo { decoupled, coupled, exact };

struct RunOptions {
  std::string data;
  std::string test_data;  // optional held-out file; overrides test_frac
  std::string target_col;
  double test_frac = 0.1;
  Index m_alpha = 100;
  Index m_beta = 10;
  Index batch = 100;
  Index increment = 10;
  Index iters = 100;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  Algo algo = Algo::decoupled;
  std::string kl_cols = "exact";
  std::string likelihood = "gaussian";
  int mc_samples = 100;
  bool normalize = false;
  std::string report;
  std::string plot_grid;
  std::string model_out;
};

/// Trains (or fits the exact oracle) and returns the JSON run report.
Json run_experiment(const RunOptions& options);

Json model_to_json(const DecoupledModel& model,
                   const std::optional<Normalization>& normalization = std::nullopt);
DecoupledModel model_from_json(const Json& json);

/// Rows x, mean, lo, hi (mean -/+ 2 sqrt(var)) over an evenly spaced grid
/// spanning the inputs; 1-D problems only.
void write_plot_grid(const std::string& path, const DecoupledModel& model, const Dataset& data,
                     Index points = 200);

/// Full command-line entry point. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 invalid flags.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dgp::cli
