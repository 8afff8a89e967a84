#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "qacal/hier_scaler.hpp"
#include "qacal/qa_binning.hpp"

namespace qacal {

struct ScalingQabConfig {
  double split_fraction = 0.5;  // share of the calibration data used to fit the scaler
  int b = 50;
  double delta = kDefaultTieBreakDelta;
  ScalerMode scaler_mode = ScalerMode::kHierarchical;
  std::uint64_t seed = 0;
  double sigma_u2 = 1.0;
  double sigma_v2 = 1.0;
  int max_iter = 100;
  double tol = 1e-8;
};

struct ScalingQabFit {
  CalibratorTable table;
  HierScalerModel scaler;
  bool scaler_converged = false;
  // Largest gap between mean proxy and mean label over equal-mass confidence
  // bins of the binning half, which the scaler never saw.
  double nu_hat = 0.0;
};

// Seeded shuffle of [0, n) cut into a scaler part of floor(n * fraction)
// and a binning part holding the rest.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> halve_indices(
    std::size_t n, double fraction, std::uint64_t seed);

// Fit the scaler on the first part, replace the labels of the second part by
// the scaler's fitted values, and QA-bin the second part on those.
// `data` carries ground-truth labels in `target`.
ScalingQabFit fit_scaling_qa_binning(std::span<const BinningSample> data,
                                     const std::string& partitioner_ref,
                                     const ScalingQabConfig& cfg);

ScalingQabFit fit_scaling_qa_binning(const Dataset& cal, const Partitioner& part,
                                     const ScalingQabConfig& cfg);

// Test time is plain QA binning on the returned table.
inline double predict_scaling_qa_binning(const CalibratorTable& table, const Partitioner& part,
                                         EmbeddingView embedding, double h) {
  return predict_qa_binning(table, part, embedding, h);
}

// max over `n_bins` equal-mass confidence bins of |mean(scaler(h, s)) - mean(t)|.
double estimate_misspecification(const HierScalerModel& scaler,
                                 std::span<const ScalerSample> holdout, int n_bins = 10);

}  // namespace qacal
