#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "qacal/dataset.hpp"
#include "qacal/partitioner.hpp"
#include "qacal/random.hpp"
#include "qacal/umd.hpp"

namespace qacal {

struct BoundQuery {
  std::size_t n = 0;  // total calibration points N
  int b = 2;          // minimum points per bin
  double alpha = 0.1;
  double nu = 0.0;    // label misspecification
};

// sqrt(ln(2N / (b alpha)) / (2 (b - 1))) + nu. Natural log throughout.
double epsilon_bound_qa(const BoundQuery& q);

// Plain UMD with B bins: sqrt(ln(2B / alpha) / (2 (floor(N/B) - 1))) + nu.
double epsilon_bound_umd(std::size_t n, int num_bins, double alpha, double nu);

// Smallest b >= 2 with epsilon_bound_qa <= eps_target, by bisection over
// [2, N]; nullopt when infeasible (eps_target <= nu, or no b <= N works).
std::optional<int> choose_b(std::size_t n, double alpha, double nu, double eps_target);

// Largest B >= 1 with N >= 2B and epsilon_bound_umd <= eps_target.
std::optional<int> choose_num_bins(std::size_t n, double alpha, double nu, double eps_target);

struct BoundRow {
  int b;
  std::size_t n;
  double nu;
  double epsilon;
};

// epsilon over b in [b_lo, b_hi] for every nu; rows in (nu, b) order.
std::vector<BoundRow> epsilon_curve(std::size_t n, double alpha, const std::vector<double>& nus,
                                    int b_lo, int b_hi);

struct ConfidenceLaw {
  enum class Kind { kUniform, kLogitNormal };
  Kind kind = Kind::kUniform;
  // uniform: support [p1, p2]; logit-normal: logit(h) ~ N(p1, p2^2)
  double p1 = 0.0;
  double p2 = 1.0;

  double sample(Engine& rng) const;
  // Integral of f(h) dF(h) over [lo, hi].
  double integrate(const std::function<double(double)>& f, double lo, double hi) const;
  double mass(double lo, double hi) const;
};

struct Miscalibration {
  double a = 0.0;  // intercept on the logit scale
  double c = 1.0;  // slope on logit(h)
};

// Clustered synthetic QA data: cluster s has embedding mean at +-separation
// on the first ceil(log2 S) coordinates (binary code of s), isotropic
// Gaussian noise of `cluster_scale`, confidences from `confidence_law`, and
// P(Y=1 | h, s) = logistic(a_s + c_s logit(h)).
struct SyntheticSpec {
  std::size_t n_partitions = 4;
  std::size_t points_per_partition = 1000;
  std::size_t embedding_dim = 4;
  double cluster_separation = 1.0;
  double cluster_scale = 0.1;
  std::vector<Miscalibration> miscalibration;  // one per partition; empty = calibrated
  ConfidenceLaw confidence_law;
  std::uint64_t seed = 0;

  void validate() const;
  double true_accuracy(double h, std::size_t cluster) const;
  std::vector<double> cluster_mean(std::size_t cluster) const;

  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

// Deterministic for a fixed spec. Record ids are "c<cluster>-<index>".
Dataset generate_synthetic(const SyntheticSpec& spec);

struct GuaranteeOptions {
  double label_shift = 0.0;  // fit on min(y + shift, 1) and bound with nu = shift
  double delta = kDefaultTieBreakDelta;
  unsigned threads = 1;
};

struct TrialOutcome {
  bool passed = false;
  double worst_gap = 0.0;
  std::size_t bins_checked = 0;
};

struct GuaranteeResult {
  double coverage = 0.0;   // fraction of passing trials
  double worst_gap = 0.0;  // over all trials
  double epsilon = 0.0;
  std::vector<TrialOutcome> trials;
};

// Monte-Carlo check of (epsilon, alpha)-conditional QA calibration. The
// kd-tree is built once on an independent draw; each trial draws a fresh
// calibration set (seed derived from spec.seed and the trial index), fits QA
// binning, and compares every per-partition bin mean with the exact
// conditional accuracy of that (leaf, bin) cell computed from the generator.
GuaranteeResult validate_conditional_guarantee(const SyntheticSpec& spec, int depth, int b,
                                               double alpha, int trials,
                                               const GuaranteeOptions& options = {});

}  // namespace qacal
