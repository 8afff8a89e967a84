#include "qacal/guarantees.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <thread>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "qacal/error.hpp"
#include "qacal/hier_scaler.hpp"
#include "qacal/qa_binning.hpp"

namespace qacal {

using nlohmann::json;

double epsilon_bound_qa(const BoundQuery& q) {
  if (q.b < 2) throw ValidationError("b must be >= 2");
  if (!(q.alpha > 0.0 && q.alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (!(q.nu >= 0.0 && q.nu <= 1.0)) throw ValidationError("nu must lie in [0, 1]");
  if (q.n == 0) throw ValidationError("N must be positive");
  const double ratio = 2.0 * static_cast<double>(q.n) / (static_cast<double>(q.b) * q.alpha);
  if (!(ratio > 1.0)) throw ValidationError("2N / (b alpha) must exceed 1");
  return std::sqrt(std::log(ratio) / (2.0 * (q.b - 1))) + q.nu;
}

double epsilon_bound_umd(std::size_t n, int num_bins, double alpha, double nu) {
  if (num_bins < 1) throw ValidationError("B must be >= 1");
  if (n < 2 * static_cast<std::size_t>(num_bins)) throw ValidationError("N must be >= 2B");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (!(nu >= 0.0 && nu <= 1.0)) throw ValidationError("nu must lie in [0, 1]");
  const auto per_bin = static_cast<double>(n / static_cast<std::size_t>(num_bins));
  return std::sqrt(std::log(2.0 * num_bins / alpha) / (2.0 * (per_bin - 1.0))) + nu;
}

std::optional<int> choose_b(std::size_t n, double alpha, double nu, double eps_target) {
  if (!(eps_target > nu) || n < 2) return std::nullopt;
  auto eps = [&](int b) { return epsilon_bound_qa({n, b, alpha, nu}); };
  int hi = static_cast<int>(std::min<std::size_t>(n, 1u << 30));
  if (eps(hi) > eps_target) return std::nullopt;
  int lo = 2;
  if (eps(lo) <= eps_target) return lo;
  // invariant: eps(lo) > target >= eps(hi)
  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    (eps(mid) <= eps_target ? hi : lo) = mid;
  }
  return hi;
}

std::optional<int> choose_num_bins(std::size_t n, double alpha, double nu, double eps_target) {
  if (n < 2) return std::nullopt;
  auto eps = [&](int B) { return epsilon_bound_umd(n, B, alpha, nu); };
  if (eps(1) > eps_target) return std::nullopt;
  // The bound grows with B: bisect for the last B that meets the target.
  int lo = 1, hi = static_cast<int>(n / 2);
  if (eps(hi) <= eps_target) return hi;
  while (hi - lo > 1) {
    const int mid = lo + (hi - lo) / 2;
    (eps(mid) <= eps_target ? lo : hi) = mid;
  }
  return lo;
}

std::vector<BoundRow> epsilon_curve(std::size_t n, double alpha, const std::vector<double>& nus,
                                    int b_lo, int b_hi) {
  std::vector<BoundRow> rows;
  for (double nu : nus)
    for (int b = std::max(b_lo, 2); b <= b_hi; ++b) rows.push_back({b, n, nu, epsilon_bound_qa({n, b, alpha, nu})});
  return rows;
}

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double logit(double p) { return std::log(p / (1.0 - p)); }

constexpr double kZLimit = 12.0;

double quad(const std::function<double(double)>& f, double a, double b) {
  if (!(b > a)) return 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 12, 1e-10);
}

}  // namespace

double ConfidenceLaw::sample(Engine& rng) const {
  if (kind == Kind::kUniform) return p1 + (p2 - p1) * uniform01(rng);
  return logistic(p1 + p2 * standard_normal(rng));
}

double ConfidenceLaw::integrate(const std::function<double(double)>& f, double lo, double hi) const {
  if (kind == Kind::kUniform) {
    const double a = std::max(lo, p1), b = std::min(hi, p2);
    return quad(f, a, b) / (p2 - p1);
  }
  auto z_of = [&](double h) {
    if (h <= 0.0) return -kZLimit;
    if (h >= 1.0) return kZLimit;
    return std::clamp((logit(h) - p1) / p2, -kZLimit, kZLimit);
  };
  const auto g = [&](double z) {
    return f(logistic(p1 + p2 * z)) * std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  };
  return quad(g, z_of(lo), z_of(hi));
}

double ConfidenceLaw::mass(double lo, double hi) const {
  if (kind == Kind::kUniform) return std::max(0.0, std::min(hi, p2) - std::max(lo, p1)) / (p2 - p1);
  auto cdf = [&](double h) {
    if (h <= 0.0) return 0.0;
    if (h >= 1.0) return 1.0;
    return normal_cdf((logit(h) - p1) / p2);
  };
  return std::max(0.0, cdf(hi) - cdf(lo));
}

void SyntheticSpec::validate() const {
  if (n_partitions == 0 || points_per_partition == 0) throw ValidationError("empty synthetic spec");
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n_partitions) ++bits;
  if (embedding_dim < std::max<std::size_t>(bits, 1))
    throw ValidationError("embedding_dim too small to separate the clusters");
  if (!miscalibration.empty() && miscalibration.size() != n_partitions)
    throw ValidationError("need one miscalibration pair per partition");
  if (!(cluster_scale > 0.0)) throw ValidationError("cluster_scale must be positive");
  if (confidence_law.kind == ConfidenceLaw::Kind::kUniform) {
    if (!(confidence_law.p1 >= 0.0 && confidence_law.p2 <= 1.0 && confidence_law.p1 < confidence_law.p2))
      throw ValidationError("uniform confidence law needs 0 <= lo < hi <= 1");
  } else if (!(confidence_law.p2 > 0.0)) {
    throw ValidationError("logit-normal confidence law needs sigma > 0");
  }
}

double SyntheticSpec::true_accuracy(double h, std::size_t cluster) const {
  const Miscalibration m = miscalibration.empty() ? Miscalibration{} : miscalibration.at(cluster);
  const double hc = std::clamp(h, 1e-9, 1.0 - 1e-9);
  return logistic(m.a + m.c * logit(hc));
}

std::vector<double> SyntheticSpec::cluster_mean(std::size_t cluster) const {
  std::vector<double> mean(embedding_dim, 0.0);
  std::size_t bits = 0;
  while ((std::size_t{1} << bits) < n_partitions) ++bits;
  for (std::size_t j = 0; j < bits; ++j)
    mean[j] = ((cluster >> j) & 1U) ? cluster_separation : -cluster_separation;
  return mean;
}

json SyntheticSpec::to_json() const {
  json mis = json::array();
  for (const auto& m : miscalibration) mis.push_back({m.a, m.c});
  const bool uniform = confidence_law.kind == ConfidenceLaw::Kind::kUniform;
  json law = uniform ? json{{"kind", "uniform"}, {"lo", confidence_law.p1}, {"hi", confidence_law.p2}}
                     : json{{"kind", "logit_normal"}, {"mu", confidence_law.p1}, {"sigma", confidence_law.p2}};
  return {{"n_partitions", n_partitions},   {"points_per_partition", points_per_partition},
          {"embedding_dim", embedding_dim}, {"cluster_separation", cluster_separation},
          {"cluster_scale", cluster_scale}, {"miscalibration", mis},
          {"confidence_law", law},          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const json& j) {
  SyntheticSpec s;
  s.n_partitions = j.value("n_partitions", s.n_partitions);
  s.points_per_partition = j.value("points_per_partition", s.points_per_partition);
  s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
  s.cluster_separation = j.value("cluster_separation", s.cluster_separation);
  s.cluster_scale = j.value("cluster_scale", s.cluster_scale);
  s.seed = j.value("seed", s.seed);
  if (j.contains("miscalibration"))
    for (const auto& m : j.at("miscalibration")) s.miscalibration.push_back({m.at(0).get<double>(), m.at(1).get<double>()});
  if (j.contains("confidence_law")) {
    const auto& law = j.at("confidence_law");
    const auto kind = law.at("kind").get<std::string>();
    if (kind == "uniform") {
      s.confidence_law = {ConfidenceLaw::Kind::kUniform, law.value("lo", 0.0), law.value("hi", 1.0)};
    } else if (kind == "logit_normal") {
      s.confidence_law = {ConfidenceLaw::Kind::kLogitNormal, law.value("mu", 0.0), law.value("sigma", 1.0)};
    } else {
      throw ValidationError("unknown confidence law \"" + kind + "\"");
    }
  }
  s.validate();
  return s;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Engine rng(spec.seed);
  Dataset d;
  d.embedding_dim = spec.embedding_dim;
  d.metadata["source"] = "synthetic";
  d.records.reserve(spec.n_partitions * spec.points_per_partition);
  for (std::size_t c = 0; c < spec.n_partitions; ++c) {
    const auto mean = spec.cluster_mean(c);
    for (std::size_t i = 0; i < spec.points_per_partition; ++i) {
      CalibrationRecord r;
      r.id = "c" + std::to_string(c) + "-" + std::to_string(i);
      r.embedding.resize(spec.embedding_dim);
      for (std::size_t m = 0; m < spec.embedding_dim; ++m)
        r.embedding[m] = mean[m] + spec.cluster_scale * standard_normal(rng);
      r.confidence = spec.confidence_law.sample(rng);
      r.label = uniform01(rng) < spec.true_accuracy(r.confidence, c) ? 1.0 : 0.0;
      r.label_kind = LabelKind::kGroundTruth;
      d.records.push_back(std::move(r));
    }
  }
  return d;
}

namespace {

// P(cluster | leaf) for every leaf, from the Gaussian mass of the leaf box.
std::vector<std::vector<double>> leaf_cluster_weights(const SyntheticSpec& spec,
                                                      const KdTreePartitioner& tree) {
  std::vector<std::vector<double>> weights;
  for (std::size_t leaf = 0; leaf < tree.num_partitions(); ++leaf) {
    const auto box = tree.leaf_region(static_cast<PartitionId>(leaf));
    std::vector<double> w(spec.n_partitions, 0.0);
    double total = 0.0;
    for (std::size_t c = 0; c < spec.n_partitions; ++c) {
      const auto mean = spec.cluster_mean(c);
      double mass = 1.0;
      for (std::size_t m = 0; m < box.size() && mass > 0.0; ++m) {
        const auto& iv = box[m];
        const double lo = std::isinf(iv.lo) ? 0.0 : normal_cdf((iv.lo - mean[m]) / spec.cluster_scale);
        const double hi = std::isinf(iv.hi) ? 1.0 : normal_cdf((iv.hi - mean[m]) / spec.cluster_scale);
        mass *= std::max(0.0, hi - lo);
      }
      w[c] = mass;
      total += mass;
    }
    if (total > 0.0)
      for (auto& x : w) x /= total;
    weights.push_back(std::move(w));
  }
  return weights;
}

TrialOutcome run_trial(const SyntheticSpec& spec, const KdTreePartitioner& tree,
                       const std::vector<std::vector<double>>& weights, int b, double epsilon,
                       const GuaranteeOptions& options, std::uint64_t trial_seed) {
  SyntheticSpec draw_spec = spec;
  draw_spec.seed = trial_seed;
  const Dataset data = generate_synthetic(draw_spec);
  std::vector<BinningSample> samples;
  samples.reserve(data.size());
  for (const auto& r : data.records)
    samples.push_back({tree.assign(r.embedding), r.confidence, std::min(r.label + options.label_shift, 1.0)});
  const CalibratorTable table = fit_qa_binning(samples, b, options.delta, tree.id());

  TrialOutcome out;
  for (const auto& [s, cal] : table.per_partition()) {
    const auto& w = weights[static_cast<std::size_t>(s)];
    const auto& edges = cal.edges();
    for (std::size_t j = 0; j + 1 < edges.size(); ++j) {
      const double lo = edges[j], hi = edges[j + 1];
      const double mass = spec.confidence_law.mass(lo, hi);
      if (!(mass > 1e-14)) continue;  // bin unreachable at test time
      double joint = 0.0;
      for (std::size_t c = 0; c < w.size(); ++c) {
        if (w[c] <= 0.0) continue;
        joint += w[c] * spec.confidence_law.integrate(
                            [&](double h) { return spec.true_accuracy(h, c); }, lo, hi);
      }
      const double gap = std::abs(joint / mass - cal.bin_means()[j]);
      out.worst_gap = std::max(out.worst_gap, gap);
      ++out.bins_checked;
    }
  }
  out.passed = out.worst_gap <= epsilon;
  return out;
}

}  // namespace

GuaranteeResult validate_conditional_guarantee(const SyntheticSpec& spec, int depth, int b,
                                               double alpha, int trials,
                                               const GuaranteeOptions& options) {
  spec.validate();
  if (trials < 50) throw ValidationError("need at least 50 trials");
  if (!(options.label_shift >= 0.0 && options.label_shift <= 1.0))
    throw ValidationError("label shift must lie in [0, 1]");

  SyntheticSpec tree_spec = spec;
  tree_spec.seed = derive_seed(spec.seed, 0xfeedULL);
  const Dataset tree_data = generate_synthetic(tree_spec);
  const auto points = embeddings_of(tree_data);
  const KdTreePartitioner tree = KdTreePartitioner::build(points, depth);
  const auto weights = leaf_cluster_weights(spec, tree);

  const std::size_t n = spec.n_partitions * spec.points_per_partition;
  GuaranteeResult result;
  result.epsilon = epsilon_bound_qa({n, b, alpha, options.label_shift});
  result.trials.resize(static_cast<std::size_t>(trials));

  std::atomic<int> next{0};
  auto worker = [&] {
    for (int t = next++; t < trials; t = next++)
      result.trials[static_cast<std::size_t>(t)] =
          run_trial(spec, tree, weights, b, result.epsilon, options,
                    derive_seed(spec.seed, static_cast<std::uint64_t>(t)));
  };
  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(trials)));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  int passed = 0;
  for (const auto& t : result.trials) {
    passed += t.passed ? 1 : 0;
    result.worst_gap = std::max(result.worst_gap, t.worst_gap);
  }
  result.coverage = static_cast<double>(passed) / trials;
  return result;
}

}  // namespace qacal
