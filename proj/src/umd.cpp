#include "qacal/umd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "qacal/error.hpp"

namespace qacal {

std::vector<std::size_t> umd_boundaries(std::size_t n, int num_bins) {
  const auto B = static_cast<std::size_t>(num_bins);
  std::vector<std::size_t> a(B + 1);
  for (std::size_t b = 0; b <= B; ++b) a[b] = (b * (n + 1) + B - 1) / B;  // ceil(b (n+1) / B)
  return a;
}

UmdCalibrator UmdCalibrator::fit(std::span<const ScoredTarget> data, int num_bins, double delta) {
  if (num_bins < 1) throw ValidationError("UMD needs at least one bin");
  const std::size_t n = data.size();
  if (n < 2 * static_cast<std::size_t>(num_bins))
    throw ValidationError("UMD needs n >= 2B (n = " + std::to_string(n) +
                          ", B = " + std::to_string(num_bins) + ")");
  if (!(delta > 0.0) || !std::isfinite(delta)) throw ValidationError("tie-break delta must be positive");
  for (const auto& p : data) {
    if (!std::isfinite(p.confidence) || !std::isfinite(p.target))
      throw ValidationError("non-finite UMD input");
    if (p.confidence < 0.0 || p.confidence > 1.0 || p.target < 0.0 || p.target > 1.0)
      throw ValidationError("UMD inputs must lie in [0, 1]");
  }

  const double step = delta / static_cast<double>(n);
  std::vector<double> key(n);
  for (std::size_t i = 0; i < n; ++i) key[i] = data[i].confidence + static_cast<double>(i) * step;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });

  // 1-based order statistic j lives at order[j-1].
  auto h_at = [&](std::size_t j) {
    if (j == 0) return 0.0;
    if (j == n + 1) return 1.0;
    return data[order[j - 1]].confidence;
  };

  const auto a = umd_boundaries(n, num_bins);
  UmdCalibrator c;
  c.n_fit_ = n;
  c.edges_.reserve(a.size());
  for (auto j : a) c.edges_.push_back(h_at(j));
  c.bin_means_.reserve(static_cast<std::size_t>(num_bins));
  for (std::size_t b = 1; b < a.size(); ++b) {
    const std::size_t l = a[b - 1], u = a[b];
    double sum = 0.0;
    for (std::size_t j = l + 1; j <= u - 1; ++j) sum += data[order[j - 1]].target;
    c.bin_means_.push_back(sum / static_cast<double>(u - l - 1));
  }
  return c;
}

std::size_t UmdCalibrator::bin_of(double h) const {
  if (!(h >= 0.0 && h <= 1.0)) throw ValidationError("confidence outside [0, 1]");
  // Largest b-1 with edges[b-1] <= h, i.e. left-closed right-open bins.
  const auto it = std::upper_bound(edges_.begin(), edges_.end(), h);
  auto idx = static_cast<std::size_t>(it - edges_.begin());
  idx = idx == 0 ? 0 : idx - 1;
  return std::min(idx, bin_means_.size() - 1);
}

double UmdCalibrator::apply(double h) const { return bin_means_[bin_of(h)]; }

nlohmann::json UmdCalibrator::to_json() const {
  return {{"edges", edges_}, {"means", bin_means_}, {"n", n_fit_}};
}

UmdCalibrator UmdCalibrator::from_json(const nlohmann::json& j) {
  UmdCalibrator c;
  c.edges_ = j.at("edges").get<std::vector<double>>();
  c.bin_means_ = j.at("means").get<std::vector<double>>();
  c.n_fit_ = j.value("n", std::size_t{0});
  if (c.bin_means_.empty() || c.edges_.size() != c.bin_means_.size() + 1)
    throw ValidationError("UMD calibrator needs B means and B+1 edges");
  if (!std::is_sorted(c.edges_.begin(), c.edges_.end()))
    throw ValidationError("UMD edges must be non-decreasing");
  return c;
}

}  // namespace qacal
