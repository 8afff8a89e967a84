#include "qacal/scaling_qa_binning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "qacal/error.hpp"
#include "qacal/random.hpp"

namespace qacal {

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> halve_indices(
    std::size_t n, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("split_fraction must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Engine rng(seed);
  shuffle(std::span<std::size_t>(order), rng);
  const auto n1 = static_cast<std::size_t>(std::floor(static_cast<double>(n) * fraction));
  return {std::vector<std::size_t>(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n1)),
          std::vector<std::size_t>(order.begin() + static_cast<std::ptrdiff_t>(n1), order.end())};
}

ScalingQabFit fit_scaling_qa_binning(std::span<const BinningSample> data,
                                     const std::string& partitioner_ref,
                                     const ScalingQabConfig& cfg) {
  if (cfg.scaler_mode == ScalerMode::kPlatt)
    throw ValidationError("scaling QA binning uses a hierarchical or pooled scaler");
  const auto [first, second] = halve_indices(data.size(), cfg.split_fraction, cfg.seed);
  if (first.size() < 2) throw ValidationError("scaler split too small");
  if (second.size() < static_cast<std::size_t>(std::max(cfg.b, 2)))
    throw ValidationError("binning split too small for b = " + std::to_string(cfg.b));

  std::vector<ScalerSample> scaler_data;
  scaler_data.reserve(first.size());
  for (auto i : first) scaler_data.push_back({data[i].partition, data[i].confidence, data[i].target});

  ScalerOptions opts;
  opts.mode = cfg.scaler_mode;
  opts.sigma_u2 = cfg.sigma_u2;
  opts.sigma_v2 = cfg.sigma_v2;
  opts.max_iter = cfg.max_iter;
  opts.tol = cfg.tol;
  ScalerFit scaler = fit_scaler(scaler_data, opts);

  std::vector<BinningSample> proxy;
  std::vector<ScalerSample> holdout;
  proxy.reserve(second.size());
  holdout.reserve(second.size());
  for (auto i : second) {
    const auto& x = data[i];
    proxy.push_back({x.partition, x.confidence, scaler.model.apply(x.confidence, x.partition)});
    holdout.push_back({x.partition, x.confidence, x.target});
  }

  ScalingQabFit out{fit_qa_binning(proxy, cfg.b, cfg.delta, partitioner_ref), std::move(scaler.model),
                    scaler.converged, 0.0};
  out.nu_hat = estimate_misspecification(out.scaler, holdout);
  return out;
}

ScalingQabFit fit_scaling_qa_binning(const Dataset& cal, const Partitioner& part,
                                     const ScalingQabConfig& cfg) {
  std::vector<BinningSample> samples;
  samples.reserve(cal.size());
  for (const auto& r : cal.records) samples.push_back({part.assign(r.embedding), r.confidence, r.label});
  return fit_scaling_qa_binning(samples, part.id(), cfg);
}

double estimate_misspecification(const HierScalerModel& scaler, std::span<const ScalerSample> holdout,
                                 int n_bins) {
  if (holdout.empty() || n_bins < 1) return 0.0;
  std::vector<std::size_t> order(holdout.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return holdout[a].confidence < holdout[b].confidence;
  });
  const std::size_t n = holdout.size();
  const auto bins = static_cast<std::size_t>(n_bins);
  double worst = 0.0;
  for (std::size_t j = 0; j < bins; ++j) {
    const std::size_t lo = j * n / bins, hi = (j + 1) * n / bins;
    if (hi <= lo) continue;
    double proxy = 0.0, label = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      const auto& x = holdout[order[k]];
      proxy += scaler.apply(x.confidence, x.partition);
      label += x.target;
    }
    worst = std::max(worst, std::abs(proxy - label) / static_cast<double>(hi - lo));
  }
  return worst;
}

}  // namespace qacal
