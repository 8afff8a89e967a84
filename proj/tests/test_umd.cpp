#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "doctest.h"
#include "qacal/error.hpp"
#include "qacal/random.hpp"
#include "qacal/umd.hpp"
#include "umd_oracle.hpp"

using namespace qacal;
using qacal::testing::literal_umd;

namespace {

std::vector<ScoredTarget> six() {
  return {{0.4, 1}, {0.1, 0}, {0.6, 1}, {0.3, 0}, {0.2, 1}, {0.5, 1}};
}

}  // namespace

TEST_CASE("hand trace: n = 6, B = 2") {
  CHECK(umd_boundaries(6, 2) == std::vector<std::size_t>{0, 4, 7});
  const auto u = UmdCalibrator::fit(six(), 2);
  CHECK(u.edges() == std::vector<double>{0.0, 0.4, 1.0});
  CHECK(u.bin_means() == std::vector<double>{1.0 / 3.0, 1.0});
  CHECK(u.apply(0.35) == 1.0 / 3.0);
  CHECK(u.apply(0.4) == 1.0);  // interior edge belongs to the higher bin
  CHECK(u.apply(1.0) == 1.0);
  CHECK(u.apply(0.0) == 1.0 / 3.0);
  CHECK(u.n_fit() == 6);
}

TEST_CASE("brute-force oracle agrees on 1000 small instances") {
  Engine rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int B = 1 + static_cast<int>(uniform_index(rng, 3));
    const int n = 2 * B + static_cast<int>(uniform_index(rng, 13 - 2 * B));
    const bool ties = trial % 3 == 0;
    std::vector<ScoredTarget> data;
    for (int i = 0; i < n; ++i) {
      const double h = ties ? static_cast<double>(uniform_index(rng, 6)) / 5.0 : uniform01(rng);
      const double t = trial % 2 ? uniform01(rng) : static_cast<double>(uniform_index(rng, 2));
      data.push_back({h, t});
    }
    const auto fit = UmdCalibrator::fit(data, B);
    const auto lit = literal_umd(data, B);
    CHECK(fit.edges() == lit.edges);
    REQUIRE(fit.bin_means().size() == lit.means.size());
    for (std::size_t b = 0; b < lit.means.size(); ++b)
      CHECK(fit.bin_means()[b] == doctest::Approx(lit.means[b]).epsilon(1e-15));
  }
}

TEST_CASE("constant targets give constant means") {
  Engine rng(1);
  std::vector<ScoredTarget> data;
  for (int i = 0; i < 40; ++i) data.push_back({uniform01(rng), 1.0});
  for (int B = 1; B <= 20; ++B) {
    const auto u = UmdCalibrator::fit(data, B);
    for (double m : u.bin_means()) CHECK(m == 1.0);
  }
}

TEST_CASE("a single bin averages everything") {
  Engine rng(2);
  std::vector<ScoredTarget> data;
  double sum = 0.0;
  for (int i = 0; i < 25; ++i) {
    data.push_back({uniform01(rng), uniform01(rng)});
    sum += data.back().target;
  }
  const auto u = UmdCalibrator::fit(data, 1);
  CHECK(u.edges() == std::vector<double>{0.0, 1.0});
  CHECK(u.bin_means()[0] == doctest::Approx(sum / 25).epsilon(1e-14));
}

TEST_CASE("structural invariants on random fits") {
  Engine rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int B = 1 + static_cast<int>(uniform_index(rng, 12));
    const std::size_t n = 2 * B + uniform_index(rng, 300);
    std::vector<ScoredTarget> data;
    for (std::size_t i = 0; i < n; ++i) data.push_back({uniform01(rng), uniform01(rng)});
    const auto u = UmdCalibrator::fit(data, B);
    CHECK(u.edges().front() == 0.0);
    CHECK(u.edges().back() == 1.0);
    CHECK(std::is_sorted(u.edges().begin(), u.edges().end()));
    for (std::size_t b = 1; b < u.edges().size(); ++b) CHECK(u.edges()[b - 1] < u.edges()[b]);
    for (double m : u.bin_means()) CHECK((m >= 0.0 && m <= 1.0));
    const auto A = umd_boundaries(n, B);
    for (int b = 1; b <= B; ++b) CHECK(A[b] - A[b - 1] >= n / static_cast<std::size_t>(B));
    const std::set<double> range(u.bin_means().begin(), u.bin_means().end());
    for (int q = 0; q < 50; ++q) CHECK(range.count(u.apply(uniform01(rng))) == 1);
    CHECK(range.count(u.apply(1.0)) == 1);
  }
}

TEST_CASE("permutation invariance for distinct confidences") {
  Engine rng(8);
  std::vector<ScoredTarget> data;
  for (int i = 0; i < 97; ++i) data.push_back({uniform01(rng), uniform01(rng)});
  const auto base = UmdCalibrator::fit(data, 7);
  for (int k = 0; k < 20; ++k) {
    shuffle(std::span<ScoredTarget>(data), rng);
    CHECK(UmdCalibrator::fit(data, 7) == base);
  }
}

TEST_CASE("ties are broken by input order and edges keep raw values") {
  // all equal confidences: the order is the input order
  std::vector<ScoredTarget> data{{0.5, 1}, {0.5, 1}, {0.5, 1}, {0.5, 0}, {0.5, 0}, {0.5, 0}};
  const auto u = UmdCalibrator::fit(data, 2);
  CHECK(u.edges() == std::vector<double>{0.0, 0.5, 1.0});
  CHECK(u.bin_means() == std::vector<double>{1.0, 0.0});
  // equal edges are allowed, so apply() lands in the last bin with that edge
  CHECK(u.apply(0.5) == 0.0);
}

TEST_CASE("precondition failures") {
  CHECK_THROWS_AS(UmdCalibrator::fit(six(), 4), ValidationError);
  CHECK_THROWS_AS(UmdCalibrator::fit(six(), 0), ValidationError);
  auto bad = six();
  bad[2].confidence = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(UmdCalibrator::fit(bad, 2), ValidationError);
  bad = six();
  bad[2].target = 1.5;
  CHECK_THROWS_AS(UmdCalibrator::fit(bad, 2), ValidationError);
  const auto u = UmdCalibrator::fit(six(), 2);
  CHECK_THROWS_AS(u.apply(-0.01), ValidationError);
  CHECK_THROWS_AS(u.apply(1.01), ValidationError);
}

TEST_CASE("json round-trip") {
  Engine rng(9);
  std::vector<ScoredTarget> data;
  for (int i = 0; i < 60; ++i) data.push_back({uniform01(rng), uniform01(rng)});
  const auto u = UmdCalibrator::fit(data, 5);
  const auto back = UmdCalibrator::from_json(nlohmann::json::parse(u.to_json().dump()));
  CHECK(back == u);
  auto j = u.to_json();
  j["edges"][2] = 0.0;
  CHECK_THROWS_AS(UmdCalibrator::from_json(j), ValidationError);
}
