#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qacal/partitioner.hpp"

namespace qacal {

// A calibrated score with its binary outcome and partition.
struct EvalRecord {
  PartitionId partition;
  double confidence;
  double label;
};

// Score sets with at most this many distinct values are grouped by exact
// value; larger ones fall back to equal-mass intervals.
inline constexpr std::size_t kDiscreteScoreLimit = 50;
inline constexpr int kDefaultCeBins = 10;
inline constexpr int kDefaultAuacGrid = 101;

struct ConfidenceGroup {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_label = 0.0;

  double gap() const;
};

std::vector<ConfidenceGroup> confidence_groups(std::span<const EvalRecord> records, int n_bins);

// sum_g (n_g / n) |mean(label)_g - mean(confidence)_g|
double estimate_ce(std::span<const EvalRecord> records, int n_bins = kDefaultCeBins);

struct PartitionCe {
  std::size_t n = 0;
  double ce = 0.0;
  double mce = 0.0;
};

struct BetaCe {
  double ce_beta = 0.0;
  std::map<PartitionId, PartitionCe> per_partition;  // out-of-bounds is its own group
};

// Partition-size weighted average of the within-partition CE.
BetaCe estimate_ce_beta(std::span<const EvalRecord> records, int n_bins = kDefaultCeBins);

double estimate_mce(std::span<const EvalRecord> records, int n_bins = kDefaultCeBins);
double estimate_mce_beta(std::span<const EvalRecord> records, int n_bins = kDefaultCeBins);

// Area under accuracy-vs-threshold, trapezoidal over the evenly spaced grid
// {0, 1/(G-1), ..., 1}. Accuracy at g is the mean label over confidence > g;
// an empty selection repeats the last defined accuracy (initially the
// overall accuracy).
double estimate_auac(std::span<const EvalRecord> records, int grid_size = kDefaultAuacGrid);

// Same curve with arbitrary thresholds placed at evenly spaced positions on [0, 1].
double estimate_auac_at(std::span<const EvalRecord> records, std::span<const double> thresholds);

// Order-statistic thresholds at levels j/(G-1); with these, AUAC is invariant
// under strictly increasing transforms of the confidences.
std::vector<double> quantile_thresholds(std::span<const EvalRecord> records, int grid_size);

struct MetricsReport {
  double ce = 0.0;
  double ce_beta = 0.0;
  double mce = 0.0;
  double mce_beta = 0.0;
  double auac = 0.0;
  std::size_t n = 0;
  std::map<PartitionId, PartitionCe> per_partition;
  std::string binning_used;

  nlohmann::json to_json() const;
};

MetricsReport evaluate_metrics(std::span<const EvalRecord> records, int n_bins = kDefaultCeBins,
                               int grid_size = kDefaultAuacGrid);

}  // namespace qacal
