#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "qacal/dataset.hpp"
#include "qacal/partitioner.hpp"
#include "qacal/umd.hpp"

namespace qacal {

// Calibration input with its partition already resolved.
struct BinningSample {
  PartitionId partition;
  double confidence;
  double target;
};

// Hash table of per-partition UMD calibrators plus the root fallback.
class CalibratorTable {
 public:
  CalibratorTable(UmdCalibrator root, std::map<PartitionId, UmdCalibrator> per_partition,
                  int b_min, std::string partitioner_ref);

  // Partition calibrator when one was fitted for `s`, root otherwise.
  const UmdCalibrator& calibrator_for(PartitionId s) const;
  double predict(PartitionId s, double h) const { return calibrator_for(s).apply(h); }

  const UmdCalibrator& root() const { return root_; }
  const std::map<PartitionId, UmdCalibrator>& per_partition() const { return per_partition_; }
  int b_min() const { return b_min_; }
  const std::string& partitioner_ref() const { return partitioner_ref_; }

  nlohmann::json to_json() const;
  static CalibratorTable from_json(const nlohmann::json& j);

  friend bool operator==(const CalibratorTable&, const CalibratorTable&) = default;

 private:
  UmdCalibrator root_;
  std::map<PartitionId, UmdCalibrator> per_partition_;
  int b_min_;
  std::string partitioner_ref_;
};

// Root fit on everything with B = floor(N/b); one UMD per partition with
// B_s = floor(n_s/b), skipping partitions with n_s < b. Out-of-bounds samples
// only feed the root.
CalibratorTable fit_qa_binning(std::span<const BinningSample> data, int b,
                               double delta, std::string partitioner_ref);

// Convenience form: targets are the dataset labels, partitions come from `part`.
CalibratorTable fit_qa_binning(const Dataset& data, const Partitioner& part, int b,
                               double delta = kDefaultTieBreakDelta);

// Throws ValidationError when `part` is not the partitioner the table was fit with.
double predict_qa_binning(const CalibratorTable& table, const Partitioner& part,
                          EmbeddingView embedding, double h);

void save_table(const std::filesystem::path& path, const CalibratorTable& table);
CalibratorTable load_table(const std::filesystem::path& path);

}  // namespace qacal
