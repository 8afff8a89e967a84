#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "qacal/partitioner.hpp"

namespace qacal {

enum class ScalerMode { kHierarchical, kPooled, kPlatt };

std::string to_string(ScalerMode mode);
ScalerMode scaler_mode_from_string(const std::string& s);

struct ScalerSample {
  PartitionId partition;
  double confidence;
  double target;  // in [0, 1]; fractional targets weight the two log terms
};

double logistic(double x);

// p = logistic(b0 + u_s + (b1 + v_s) h), with u_s = v_s = 0 for unseen or
// out-of-bounds partitions and for the pooled/platt modes.
struct HierScalerModel {
  ScalerMode mode = ScalerMode::kPooled;
  double b0 = 0.0;
  double b1 = 0.0;
  double sigma_u2 = 1.0;
  double sigma_v2 = 1.0;
  std::map<PartitionId, std::pair<double, double>> effects;  // s -> (U_s, V_s)

  double apply(double h, PartitionId s = kOutOfBounds) const;

  nlohmann::json to_json() const;
  static HierScalerModel from_json(const nlohmann::json& j);
};

struct ScalerOptions {
  ScalerMode mode = ScalerMode::kHierarchical;
  // Prior variances of the random intercepts/slopes. +inf disables the penalty.
  double sigma_u2 = 1.0;
  double sigma_v2 = 1.0;
  int max_iter = 100;
  // On the gradient infinity-norm. A fit also counts as converged when the
  // Newton decrement falls to round-off relative to the objective.
  double tol = 1e-8;
  // Ridge on (B0, B1); keeps the fit finite under complete separation.
  double fixed_ridge = 1e-6;
};

// Penalized log-likelihood of the scaler as a function of the packed
// parameter vector [B0, B1, U_0..U_{S-1}, V_0..V_{S-1}].
class ScalerObjective {
 public:
  ScalerObjective(std::span<const ScalerSample> data, const ScalerOptions& options);

  std::size_t num_params() const { return 2 + 2 * groups_.size(); }
  const std::vector<PartitionId>& groups() const { return groups_; }

  double value(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const;
  Eigen::MatrixXd hessian(const Eigen::VectorXd& theta) const;

  HierScalerModel unpack(const Eigen::VectorXd& theta) const;

 private:
  std::vector<ScalerSample> data_;
  std::vector<int> group_index_;  // -1 for samples without random effects
  std::vector<PartitionId> groups_;
  ScalerOptions options_;
  double precision_u_;
  double precision_v_;
};

struct ScalerFit {
  HierScalerModel model;
  bool converged = false;
  int iterations = 0;
  double objective = 0.0;
  double gradient_norm = 0.0;
  std::vector<double> objective_trace;  // value after each accepted step
};

// Damped Newton ascent with step halving. Non-convergence is reported in
// `converged`, with the best iterate in `model`.
ScalerFit fit_scaler(std::span<const ScalerSample> data, const ScalerOptions& options);

// Unpenalized Bernoulli log-likelihood of `data` under `model`.
double log_likelihood(const HierScalerModel& model, std::span<const ScalerSample> data);

struct PriorVariance {
  double sigma_u2;
  double sigma_v2;
};

inline const std::vector<double> kDefaultVarianceGrid{0.01, 0.1, 1.0, 10.0};

// Held-out log-likelihood differences below this many nats count as ties.
inline constexpr double kVarianceTieTolerance = 2.0;

// Grid pair maximizing held-out log-likelihood of the hierarchical fit; ties
// go to the smaller variances.
PriorVariance select_prior_variance(std::span<const ScalerSample> train,
                                    std::span<const ScalerSample> holdout,
                                    const std::vector<double>& grid,
                                    ScalerOptions options = {});

void save_scaler(const std::filesystem::path& path, const HierScalerModel& model);
HierScalerModel load_scaler(const std::filesystem::path& path);

}  // namespace qacal
