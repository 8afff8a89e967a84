#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qacal/bundle.hpp"
#include "qacal/dataset.hpp"
#include "qacal/metrics.hpp"

namespace qacal {

struct SweepConfig {
  std::vector<int> depths{0, 1, 2, 3, 4};
  std::vector<int> b_grid;  // empty: choose_b over eps_grid x nu_grid
  std::vector<int> B_grid;  // empty: invert the plain-UMD bound over eps_grid
  std::vector<double> variance_grid = kDefaultVarianceGrid;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<Method> methods{std::begin(kAllMethods), std::end(kAllMethods)};
  std::array<double, 4> fractions{0.20, 0.60, 0.10, 0.10};
  double alpha = 0.1;
  std::vector<double> eps_grid{0.05, 0.10, 0.15, 0.20};
  std::vector<double> nu_grid{0.0, 0.025, 0.05};
  // All methods are scored against one fixed kd-tree of this depth, built on
  // the tree split of each seed.
  int eval_depth = 2;
  int ce_bins = kDefaultCeBins;
  int auac_grid = kDefaultAuacGrid;
  double delta = kDefaultTieBreakDelta;
  double scaler_split = 0.5;
  unsigned threads = 1;

  nlohmann::json to_json() const;
  // Unknown keys are rejected.
  static SweepConfig from_json(const nlohmann::json& j);
};

// Bins-per-partition envelope: 3 <= floor((n_cal / 2^d) / b) <= 10.
bool within_bin_envelope(std::size_t n_cal, int depth, int b);

std::vector<int> derive_b_grid(std::size_t n_cal, const SweepConfig& cfg);
std::vector<int> derive_B_grid(std::size_t n_cal, const SweepConfig& cfg);

struct Hyperparameters {
  std::optional<int> depth;
  std::optional<int> b;
  std::optional<int> num_bins;
  std::optional<double> sigma_u2;
  std::optional<double> sigma_v2;

  nlohmann::json to_json() const;
};

struct RunResult {
  Method method;
  std::uint64_t seed;
  Hyperparameters hyper;
  MetricsReport tune;
  MetricsReport test;
};

struct CellFailure {
  Method method;
  std::uint64_t seed;
  std::string reason;
};

struct SweepReport {
  SweepConfig config;  // with the derived grids filled in
  std::size_t n_records = 0;
  std::vector<RunResult> results;    // sorted by (method, seed)
  std::vector<CellFailure> failures;  // same order
};

SweepReport run_sweep(const Dataset& data, SweepConfig cfg);

// results.csv, summary.csv, summary.json, per_partition.csv, failures.csv,
// resolved_config.json.
void write_reports(const SweepReport& report, const std::filesystem::path& out_dir);

struct MetricSummary {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation; 0 for a single seed
};

struct MethodSummary {
  Method method;
  std::size_t n_seeds = 0;
  MetricSummary ce, ce_beta, mce, mce_beta, auac;
};

std::vector<MethodSummary> summarize(const SweepReport& report);

// "%.17g": round-trips doubles and is stable across runs.
std::string format_double(double x);

}  // namespace qacal
