#include "qacal/qa_binning.hpp"

#include <fstream>

#include "qacal/error.hpp"

namespace qacal {

using nlohmann::json;

CalibratorTable::CalibratorTable(UmdCalibrator root, std::map<PartitionId, UmdCalibrator> per_partition,
                                 int b_min, std::string partitioner_ref)
    : root_(std::move(root)),
      per_partition_(std::move(per_partition)),
      b_min_(b_min),
      partitioner_ref_(std::move(partitioner_ref)) {}

const UmdCalibrator& CalibratorTable::calibrator_for(PartitionId s) const {
  if (s != kOutOfBounds) {
    if (auto it = per_partition_.find(s); it != per_partition_.end()) return it->second;
  }
  return root_;
}

json CalibratorTable::to_json() const {
  json parts = json::object();
  for (const auto& [s, c] : per_partition_) {
    parts[std::to_string(s)] = {{"edges", c.edges()}, {"means", c.bin_means()}, {"n_s", c.n_fit()}};
  }
  return {{"format", "qacal.table.v1"},
          {"b_min", b_min_},
          {"partitioner_ref", partitioner_ref_},
          {"root", root_.to_json()},
          {"partitions", parts}};
}

CalibratorTable CalibratorTable::from_json(const json& j) {
  if (j.at("format") != "qacal.table.v1") throw ValidationError("not a qacal.table.v1 file");
  std::map<PartitionId, UmdCalibrator> parts;
  for (const auto& [key, value] : j.at("partitions").items()) {
    json c = value;
    c["n"] = value.value("n_s", std::size_t{0});
    parts.emplace(std::stoi(key), UmdCalibrator::from_json(c));
  }
  return CalibratorTable(UmdCalibrator::from_json(j.at("root")), std::move(parts),
                         j.at("b_min").get<int>(), j.at("partitioner_ref").get<std::string>());
}

CalibratorTable fit_qa_binning(std::span<const BinningSample> data, int b, double delta,
                               std::string partitioner_ref) {
  if (b < 2) throw ValidationError("minimum points per bin b must be >= 2");
  const std::size_t n = data.size();
  if (n / static_cast<std::size_t>(b) == 0)
    throw ValidationError("floor(N/b) = 0: need at least b = " + std::to_string(b) + " points");

  std::vector<ScoredTarget> all;
  all.reserve(n);
  std::map<PartitionId, std::vector<ScoredTarget>> groups;
  for (const auto& x : data) {
    all.push_back({x.confidence, x.target});
    if (x.partition != kOutOfBounds) groups[x.partition].push_back({x.confidence, x.target});
  }
  auto bins_for = [b](std::size_t count) { return static_cast<int>(count / static_cast<std::size_t>(b)); };

  UmdCalibrator root = UmdCalibrator::fit(all, bins_for(n), delta);
  std::map<PartitionId, UmdCalibrator> per_partition;
  for (const auto& [s, pts] : groups) {
    const int bins = bins_for(pts.size());
    if (bins < 1) continue;  // too small: served by root
    per_partition.emplace(s, UmdCalibrator::fit(pts, bins, delta));
  }
  return CalibratorTable(std::move(root), std::move(per_partition), b, std::move(partitioner_ref));
}

CalibratorTable fit_qa_binning(const Dataset& data, const Partitioner& part, int b, double delta) {
  std::vector<BinningSample> samples;
  samples.reserve(data.size());
  for (const auto& r : data.records) samples.push_back({part.assign(r.embedding), r.confidence, r.label});
  return fit_qa_binning(samples, b, delta, part.id());
}

double predict_qa_binning(const CalibratorTable& table, const Partitioner& part,
                          EmbeddingView embedding, double h) {
  if (table.partitioner_ref() != part.id())
    throw ValidationError("calibrator table was fit with partitioner " + table.partitioner_ref() +
                          ", not " + part.id());
  return table.predict(part.assign(embedding), h);
}

void save_table(const std::filesystem::path& path, const CalibratorTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << table.to_json().dump(1) << '\n';
}

CalibratorTable load_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open table file " + path.string());
  try {
    return CalibratorTable::from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError("malformed table file " + path.string() + ": " + e.what());
  }
}

}  // namespace qacal
