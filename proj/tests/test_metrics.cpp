#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "doctest.h"
#include "qacal/error.hpp"
#include "qacal/metrics.hpp"
#include "qacal/random.hpp"

using namespace qacal;

namespace {

// 40 answers all scored 0.8, in four groups of ten whose accuracies are
// 0.6, 0.7, 0.9 and 1.0. The first two groups share one partition, the last
// two another.
std::vector<EvalRecord> table_fixture() {
  const int correct[4] = {6, 7, 9, 10};
  std::vector<EvalRecord> out;
  for (int g = 0; g < 4; ++g)
    for (int i = 0; i < 10; ++i) out.push_back({g < 2 ? 0 : 1, 0.8, i < correct[g] ? 1.0 : 0.0});
  return out;
}

// Straight from the definitions, no shared helpers. Only valid when every
// group is keyed by an exact confidence value.
double naive_ce(const std::vector<EvalRecord>& rs) {
  double total = 0.0;
  for (const auto& r : rs) {
    double n = 0, conf = 0, lab = 0;
    for (const auto& q : rs)
      if (q.confidence == r.confidence) ++n, conf += q.confidence, lab += q.label;
    // each record contributes 1/n of its group's weight
    total += std::abs(lab / n - conf / n);
  }
  return total / static_cast<double>(rs.size());
}

double naive_ce_beta(const std::vector<EvalRecord>& rs) {
  std::map<PartitionId, std::vector<EvalRecord>> parts;
  for (const auto& r : rs) parts[r.partition].push_back(r);
  double total = 0.0;
  for (const auto& [s, group] : parts) total += static_cast<double>(group.size()) * naive_ce(group);
  return total / static_cast<double>(rs.size());
}

double naive_auac(const std::vector<EvalRecord>& rs, int grid) {
  double overall = 0.0;
  for (const auto& r : rs) overall += r.label;
  double last = overall / static_cast<double>(rs.size());
  std::vector<double> acc;
  for (int j = 0; j < grid; ++j) {
    const double g = static_cast<double>(j) / (grid - 1);
    double n = 0, lab = 0;
    for (const auto& r : rs)
      if (r.confidence > g) ++n, lab += r.label;
    if (n > 0) last = lab / n;
    acc.push_back(last);
  }
  double area = 0.0;
  for (int j = 1; j < grid; ++j) area += (acc[j - 1] + acc[j]) / 2.0 / (grid - 1);
  return area;
}

std::vector<EvalRecord> random_records(std::size_t n, int levels, int parts, std::uint64_t seed) {
  Engine rng(seed);
  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = levels > 0 ? static_cast<double>(uniform_index(rng, levels)) / levels : uniform01(rng);
    const double y = uniform01(rng) < 0.5 * (c + uniform01(rng)) ? 1.0 : 0.0;
    const PartitionId s = static_cast<PartitionId>(uniform_index(rng, parts + 1)) - 1;  // includes OOB
    out.push_back({s, c, y});
  }
  return out;
}

}  // namespace

TEST_CASE("table fixture: uniform confidence hides partition miscalibration") {
  const auto rs = table_fixture();
  CHECK(estimate_ce(rs) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(estimate_ce_beta(rs).ce_beta == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(estimate_mce_beta(rs) == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(estimate_mce(rs) == doctest::Approx(0.0).epsilon(1e-12));

  const auto report = evaluate_metrics(rs);
  CHECK(report.per_partition.at(0).ce == doctest::Approx(0.15));
  CHECK(report.per_partition.at(1).ce == doctest::Approx(0.15));
  CHECK(report.binning_used == "exact-value groups");
}

TEST_CASE("small inputs agree with a from-definition evaluator") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto rs = random_records(1 + seed % 20, 5, 3, seed);
    CHECK(std::abs(estimate_ce(rs) - naive_ce(rs)) <= 1e-12);
    CHECK(std::abs(estimate_ce_beta(rs).ce_beta - naive_ce_beta(rs)) <= 1e-12);
    CHECK(std::abs(estimate_auac(rs, 11) - naive_auac(rs, 11)) <= 1e-12);
  }
}

TEST_CASE("AUAC of a two-point set matches the hand trapezoid") {
  const std::vector<EvalRecord> rs{{0, 0.9, 1.0}, {0, 0.1, 0.0}};
  // thresholds 0..0.09 see both answers (0.5), from 0.1 only the correct one
  const double expected = 9 * 0.5 / 100 + 0.75 / 100 + 90 * 1.0 / 100;
  CHECK(estimate_auac(rs) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(0.9525));
}

TEST_CASE("AUAC extremes") {
  std::vector<EvalRecord> ones, zeros;
  Engine rng(3);
  for (int i = 0; i < 100; ++i) {
    ones.push_back({0, uniform01(rng), 1.0});
    zeros.push_back({0, uniform01(rng), 0.0});
  }
  CHECK(estimate_auac(ones) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(estimate_auac(zeros) == 0.0);
}

TEST_CASE("quantile thresholds make AUAC invariant to monotone transforms") {
  const auto rs = random_records(500, 0, 1, 17);
  auto squashed = rs;
  for (auto& r : squashed) r.confidence = r.confidence * r.confidence * r.confidence;

  const auto t1 = quantile_thresholds(rs, 101);
  const auto t2 = quantile_thresholds(squashed, 101);
  CHECK(estimate_auac_at(rs, t1) == doctest::Approx(estimate_auac_at(squashed, t2)).epsilon(1e-12));

  // the fixed grid is not invariant
  CHECK(std::abs(estimate_auac(rs) - estimate_auac(squashed)) > 1e-3);
}

TEST_CASE("single partition CE_beta equals CE exactly") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto rs = random_records(300, seed % 2 ? 0 : 7, 1, seed);
    for (auto& r : rs) r.partition = 0;
    CHECK(estimate_ce_beta(rs).ce_beta == estimate_ce(rs));
    CHECK(estimate_mce_beta(rs) == estimate_mce(rs));
  }
}

TEST_CASE("metrics are permutation invariant") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto rs = random_records(400, seed % 2 ? 0 : 9, 4, seed);
    // force ties across equal-mass boundaries in the continuous case
    for (std::size_t i = 0; i < rs.size(); i += 7) rs[i].confidence = 0.5;
    const auto a = evaluate_metrics(rs);
    Engine rng(seed + 100);
    shuffle(std::span<EvalRecord>(rs), rng);
    const auto b = evaluate_metrics(rs);
    CHECK(a.ce == doctest::Approx(b.ce).epsilon(1e-12));
    CHECK(a.ce_beta == doctest::Approx(b.ce_beta).epsilon(1e-12));
    CHECK(a.mce_beta == doctest::Approx(b.mce_beta).epsilon(1e-12));
    CHECK(a.auac == doctest::Approx(b.auac).epsilon(1e-12));
  }
}

TEST_CASE("worst partition gap dominates the averaged one") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto rs = random_records(50 + seed * 10, seed % 3 ? 0 : 6, 5, seed);
    const auto m = evaluate_metrics(rs);
    CHECK(m.mce_beta >= m.ce_beta - 1e-15);
    CHECK(m.mce >= m.ce - 1e-15);
    CHECK(m.ce_beta >= 0.0);
    CHECK(m.ce_beta <= 1.0);
  }
}

TEST_CASE("out-of-bounds records form their own group") {
  std::vector<EvalRecord> rs{{kOutOfBounds, 0.5, 1.0}, {kOutOfBounds, 0.5, 1.0}, {0, 0.5, 0.0}, {0, 0.5, 1.0}};
  const auto beta = estimate_ce_beta(rs);
  REQUIRE(beta.per_partition.count(kOutOfBounds) == 1);
  CHECK(beta.per_partition.at(kOutOfBounds).ce == doctest::Approx(0.5));
  CHECK(beta.ce_beta == doctest::Approx(0.25));
  CHECK(evaluate_metrics(rs).to_json()["per_partition"].contains("oob"));
}

TEST_CASE("continuous scores use equal-mass bins") {
  const auto rs = random_records(1000, 0, 1, 5);
  const auto groups = confidence_groups(rs, 10);
  REQUIRE(groups.size() == 10);
  for (const auto& g : groups) CHECK(g.count == 100);
  for (std::size_t j = 1; j < groups.size(); ++j) CHECK(groups[j].mean_confidence >= groups[j - 1].mean_confidence);
  CHECK(evaluate_metrics(rs).binning_used == "10 equal-mass bins");
}

TEST_CASE("invalid evaluation input is rejected") {
  CHECK_THROWS_AS(estimate_ce(std::vector<EvalRecord>{}), ValidationError);
  CHECK_THROWS_AS(estimate_ce(std::vector<EvalRecord>{{0, 1.5, 1.0}}), ValidationError);
  CHECK_THROWS_AS(estimate_ce(std::vector<EvalRecord>{{0, 0.5, 0.3}}), ValidationError);
  CHECK_THROWS_AS(estimate_auac(std::vector<EvalRecord>{{0, 0.5, 1.0}}, 1), ValidationError);
}
