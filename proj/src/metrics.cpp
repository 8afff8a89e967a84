#include "qacal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "qacal/error.hpp"

namespace qacal {

namespace {

void check_records(std::span<const EvalRecord> records) {
  if (records.empty()) throw ValidationError("no records to evaluate");
  for (const auto& r : records) {
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0))
      throw ValidationError("evaluation confidence outside [0, 1]");
    if (r.label != 0.0 && r.label != 1.0) throw ValidationError("evaluation labels must be 0 or 1");
  }
}

std::size_t distinct_confidences(std::span<const EvalRecord> records, std::size_t cap) {
  std::set<double> seen;
  for (const auto& r : records) {
    seen.insert(r.confidence);
    if (seen.size() > cap) break;
  }
  return seen.size();
}

std::map<PartitionId, std::vector<EvalRecord>> by_partition(std::span<const EvalRecord> records) {
  std::map<PartitionId, std::vector<EvalRecord>> groups;
  for (const auto& r : records) groups[r.partition].push_back(r);
  return groups;
}

}  // namespace

double ConfidenceGroup::gap() const { return std::abs(mean_label - mean_confidence); }

std::vector<ConfidenceGroup> confidence_groups(std::span<const EvalRecord> records, int n_bins) {
  check_records(records);
  if (n_bins < 1) throw ValidationError("n_bins must be >= 1");
  std::vector<ConfidenceGroup> out;

  if (distinct_confidences(records, kDiscreteScoreLimit) <= kDiscreteScoreLimit) {
    std::map<double, std::pair<std::size_t, double>> acc;  // value -> (count, label sum)
    for (const auto& r : records) {
      auto& [count, labels] = acc[r.confidence];
      ++count;
      labels += r.label;
    }
    for (const auto& [value, cl] : acc) {
      const double n = static_cast<double>(cl.first);
      out.push_back({cl.first, value, cl.second / n});
    }
    return out;
  }

  // Equal-mass intervals over the (confidence, label) order, so ties across a
  // boundary are split the same way for every permutation of the input.
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (records[a].confidence != records[b].confidence) return records[a].confidence < records[b].confidence;
    return records[a].label < records[b].label;
  });
  const std::size_t n = records.size();
  const auto bins = static_cast<std::size_t>(n_bins);
  for (std::size_t j = 0; j < bins; ++j) {
    const std::size_t lo = j * n / bins, hi = (j + 1) * n / bins;
    if (hi <= lo) continue;
    double conf = 0.0, label = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      conf += records[order[k]].confidence;
      label += records[order[k]].label;
    }
    const double m = static_cast<double>(hi - lo);
    out.push_back({hi - lo, conf / m, label / m});
  }
  return out;
}

double estimate_ce(std::span<const EvalRecord> records, int n_bins) {
  const auto groups = confidence_groups(records, n_bins);
  double weighted = 0.0;
  for (const auto& g : groups) weighted += static_cast<double>(g.count) * g.gap();
  return weighted / static_cast<double>(records.size());
}

BetaCe estimate_ce_beta(std::span<const EvalRecord> records, int n_bins) {
  check_records(records);
  BetaCe out;
  const double n = static_cast<double>(records.size());
  for (const auto& [s, group] : by_partition(records)) {
    PartitionCe pc;
    pc.n = group.size();
    pc.ce = estimate_ce(group, n_bins);
    for (const auto& g : confidence_groups(group, n_bins)) pc.mce = std::max(pc.mce, g.gap());
    out.ce_beta += (static_cast<double>(pc.n) / n) * pc.ce;
    out.per_partition.emplace(s, pc);
  }
  return out;
}

double estimate_mce(std::span<const EvalRecord> records, int n_bins) {
  double worst = 0.0;
  for (const auto& g : confidence_groups(records, n_bins)) worst = std::max(worst, g.gap());
  return worst;
}

double estimate_mce_beta(std::span<const EvalRecord> records, int n_bins) {
  check_records(records);
  double worst = 0.0;
  for (const auto& [s, group] : by_partition(records)) worst = std::max(worst, estimate_mce(group, n_bins));
  return worst;
}

double estimate_auac_at(std::span<const EvalRecord> records, std::span<const double> thresholds) {
  check_records(records);
  if (thresholds.size() < 2) throw ValidationError("AUAC needs at least two grid points");

  std::vector<std::pair<double, double>> sorted;  // (confidence, label)
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.emplace_back(r.confidence, r.label);
  std::sort(sorted.begin(), sorted.end());
  // suffix[i] = sum of labels of sorted[i..n)
  std::vector<double> suffix(sorted.size() + 1, 0.0);
  for (std::size_t i = sorted.size(); i-- > 0;) suffix[i] = suffix[i + 1] + sorted[i].second;

  const std::size_t n = sorted.size();
  double carried = suffix[0] / static_cast<double>(n);
  std::vector<double> acc(thresholds.size());
  for (std::size_t j = 0; j < thresholds.size(); ++j) {
    const auto first = static_cast<std::size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), std::make_pair(thresholds[j], 2.0)) - sorted.begin());
    if (first < n) carried = suffix[first] / static_cast<double>(n - first);
    acc[j] = carried;
  }
  const double width = 1.0 / static_cast<double>(thresholds.size() - 1);
  double area = 0.0;
  for (std::size_t j = 1; j < acc.size(); ++j) area += 0.5 * (acc[j - 1] + acc[j]) * width;
  return area;
}

double estimate_auac(std::span<const EvalRecord> records, int grid_size) {
  if (grid_size < 2) throw ValidationError("AUAC grid needs at least two points");
  std::vector<double> grid(static_cast<std::size_t>(grid_size));
  for (int j = 0; j < grid_size; ++j) grid[static_cast<std::size_t>(j)] = static_cast<double>(j) / (grid_size - 1);
  return estimate_auac_at(records, grid);
}

std::vector<double> quantile_thresholds(std::span<const EvalRecord> records, int grid_size) {
  check_records(records);
  if (grid_size < 2) throw ValidationError("AUAC grid needs at least two points");
  std::vector<double> conf;
  conf.reserve(records.size());
  for (const auto& r : records) conf.push_back(r.confidence);
  std::sort(conf.begin(), conf.end());
  std::vector<double> out(static_cast<std::size_t>(grid_size));
  for (int j = 0; j < grid_size; ++j) {
    const double level = static_cast<double>(j) / (grid_size - 1);
    out[static_cast<std::size_t>(j)] = conf[static_cast<std::size_t>(std::floor(level * static_cast<double>(conf.size() - 1)))];
  }
  return out;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json parts = nlohmann::json::object();
  for (const auto& [s, pc] : per_partition)
    parts[s == kOutOfBounds ? "oob" : std::to_string(s)] = {{"n", pc.n}, {"ce", pc.ce}, {"mce", pc.mce}};
  return {{"ce", ce},       {"ce_beta", ce_beta}, {"mce", mce},
          {"mce_beta", mce_beta}, {"auac", auac}, {"n", n},
          {"per_partition", parts}, {"binning_used", binning_used}};
}

MetricsReport evaluate_metrics(std::span<const EvalRecord> records, int n_bins, int grid_size) {
  MetricsReport m;
  m.n = records.size();
  m.ce = estimate_ce(records, n_bins);
  auto beta = estimate_ce_beta(records, n_bins);
  m.ce_beta = beta.ce_beta;
  m.per_partition = std::move(beta.per_partition);
  m.mce = estimate_mce(records, n_bins);
  m.mce_beta = estimate_mce_beta(records, n_bins);
  m.auac = estimate_auac(records, grid_size);
  m.binning_used = distinct_confidences(records, kDiscreteScoreLimit) <= kDiscreteScoreLimit
                       ? "exact-value groups"
                       : std::to_string(n_bins) + " equal-mass bins";
  return m;
}

}  // namespace qacal
