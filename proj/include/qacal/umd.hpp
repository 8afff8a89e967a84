#pragma once

#include <span>
#include <vector>

#include "json.hpp"

namespace qacal {

// (confidence h, target t) with t in [0, 1]; t may be a proxy label.
struct ScoredTarget {
  double confidence;
  double target;
};

inline constexpr double kDefaultTieBreakDelta = 1e-10;

// Uniform-mass double-dipping histogram binning.
//
// Bins are delimited by the order statistics h_(A_b) with
// A = [0, ceil(D), ceil(2D), ..., n+1], D = (n+1)/B, h_(0) = 0, h_(n+1) = 1.
// Bin b reports the mean target over order statistics l+1 .. u-1 where
// l = A_{b-1}, u = A_b; the boundary points themselves are not averaged.
class UmdCalibrator {
 public:
  // Requires B >= 1 and n >= 2B. Ties in confidence are ordered by input
  // position: the sort key of the i-th pair is h_i + i * delta / n. Stored
  // edges are raw confidences, so with tied inputs adjacent edges may coincide.
  static UmdCalibrator fit(std::span<const ScoredTarget> data, int num_bins,
                           double delta = kDefaultTieBreakDelta);

  // Mean of the bin with edges[b-1] <= h < edges[b]; h == 1 falls in the last
  // bin. Throws ValidationError when h is outside [0, 1].
  double apply(double h) const;
  std::size_t bin_of(double h) const;

  int num_bins() const { return static_cast<int>(bin_means_.size()); }
  std::size_t n_fit() const { return n_fit_; }
  const std::vector<double>& edges() const { return edges_; }
  const std::vector<double>& bin_means() const { return bin_means_; }

  nlohmann::json to_json() const;
  static UmdCalibrator from_json(const nlohmann::json& j);

  friend bool operator==(const UmdCalibrator&, const UmdCalibrator&) = default;

 private:
  std::vector<double> edges_;
  std::vector<double> bin_means_;
  std::size_t n_fit_ = 0;
};

// Boundary index array A of length B+1 (exact integer ceilings).
std::vector<std::size_t> umd_boundaries(std::size_t n, int num_bins);

}  // namespace qacal
