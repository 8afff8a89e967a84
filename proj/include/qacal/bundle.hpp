#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "qacal/dataset.hpp"
#include "qacal/hier_scaler.hpp"
#include "qacal/partitioner.hpp"
#include "qacal/qa_binning.hpp"
#include "qacal/umd.hpp"

namespace qacal {

// None, B, S, S-B, QAB, S-QAB, HS-QAB.
enum class Method { kNone, kUmd, kPlatt, kScaleBin, kQab, kSQab, kHsQab };

inline constexpr Method kAllMethods[] = {Method::kNone,     Method::kUmd, Method::kPlatt,
                                         Method::kScaleBin, Method::kQab, Method::kSQab,
                                         Method::kHsQab};

std::string to_string(Method m);       // CLI spelling: none, umd, platt, ...
std::string display_name(Method m);    // report spelling: None, B, S, ...
Method method_from_string(const std::string& s);
bool uses_partitioner(Method m);

struct FitConfig {
  Method method = Method::kQab;
  int b = 50;          // min points per bin, QA binning family
  int num_bins = 10;   // B, for umd and scale-bin
  double delta = kDefaultTieBreakDelta;
  double split_fraction = 0.5;  // scaler share for the two-stage methods
  std::uint64_t seed = 0;
  // Prior variances for hs-qab; nullopt means pick them on the tuning data.
  std::optional<double> sigma_u2;
  std::optional<double> sigma_v2;
  std::vector<double> variance_grid = kDefaultVarianceGrid;
  int max_iter = 100;

  nlohmann::json to_json() const;
  static FitConfig from_json(const nlohmann::json& j);
};

class FittedCalibrator {
 public:
  Method method() const { return config_.method; }
  const FitConfig& config() const { return config_; }
  double nu_hat() const { return nu_hat_; }
  const std::optional<UmdCalibrator>& umd() const { return umd_; }
  const std::optional<HierScalerModel>& scaler() const { return scaler_; }
  const std::optional<CalibratorTable>& table() const { return table_; }
  const std::shared_ptr<const Partitioner>& partitioner() const { return partitioner_; }

  double predict(EmbeddingView embedding, double h) const;
  std::vector<double> predict_all(const Dataset& d) const;

  // Manifest plus one companion file per fitted component, named after the
  // manifest stem (<stem>.table.json, <stem>.scaler.json, ...).
  void save(const std::filesystem::path& manifest) const;
  static FittedCalibrator load(const std::filesystem::path& manifest);

  friend FittedCalibrator fit_calibrator(const Dataset&, const FitConfig&,
                                         std::shared_ptr<const Partitioner>, const Dataset*);

 private:
  FitConfig config_;
  double nu_hat_ = 0.0;
  std::optional<UmdCalibrator> umd_;
  std::optional<HierScalerModel> scaler_;
  std::optional<CalibratorTable> table_;
  std::shared_ptr<const Partitioner> partitioner_;
};

// `part` is required for the QA binning family and ignored otherwise.
// `tune` feeds the prior-variance search of hs-qab when no variances are set.
FittedCalibrator fit_calibrator(const Dataset& train, const FitConfig& cfg,
                                std::shared_ptr<const Partitioner> part = nullptr,
                                const Dataset* tune = nullptr);

}  // namespace qacal
