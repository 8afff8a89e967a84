#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "qacal/error.hpp"
#include "qacal/guarantees.hpp"
#include "qacal/pipeline.hpp"
#include "test_support.hpp"

using namespace qacal;
using qacal::testing::TempDir;

namespace {

Dataset small_synthetic() {
  SyntheticSpec s;
  s.n_partitions = 4;
  s.points_per_partition = 1000;
  s.cluster_scale = 0.3;
  s.miscalibration = {{0.5, 0.3}, {-0.3, 0.8}, {0.2, 1.5}, {-0.5, 3.0}};
  s.seed = 7;
  return generate_synthetic(s);
}

SweepConfig small_config() {
  SweepConfig c;
  c.depths = {0, 1, 2};
  c.seeds = {0, 1};
  c.variance_grid = {0.1, 1.0};
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("bin envelope boundaries") {
  CHECK(within_bin_envelope(2400, 0, 240));
  CHECK(within_bin_envelope(2400, 0, 219));  // 10.96 bins floors to 10
  CHECK_FALSE(within_bin_envelope(2400, 0, 218));
  CHECK(within_bin_envelope(2400, 0, 800));
  CHECK_FALSE(within_bin_envelope(2400, 0, 801));
  CHECK(within_bin_envelope(2400, 2, 200));
  CHECK_FALSE(within_bin_envelope(2400, 2, 201));
  CHECK_FALSE(within_bin_envelope(2400, 1, 0));
}

TEST_CASE("derived grids invert the bounds") {
  SweepConfig c;
  for (int b : derive_b_grid(9600, c)) {
    bool hit = false;
    for (double eps : c.eps_grid)
      for (double nu : c.nu_grid) hit = hit || choose_b(9600, c.alpha, nu, eps) == b;
    CHECK(hit);
  }
  for (int B : derive_B_grid(9600, c)) CHECK(B >= 1);
  CHECK(derive_B_grid(9600, c).size() == c.eps_grid.size());
}

TEST_CASE("sweep config JSON round trips and rejects unknown keys") {
  auto c = small_config();
  c.b_grid = {30, 60};
  const auto back = SweepConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  auto j = c.to_json();
  j["depthz"] = 3;
  CHECK_THROWS_AS(SweepConfig::from_json(j), ValidationError);
}

TEST_CASE("sweep respects the envelope and fills every cell") {
  const auto data = small_synthetic();
  const auto rep = run_sweep(data, small_config());
  const std::size_t n_cal = split_sizes(data.size(), rep.config.fractions)[1];
  CHECK(rep.failures.empty());
  CHECK(rep.results.size() == 7 * 2);
  for (const auto& r : rep.results) {
    if (uses_partitioner(r.method)) {
      REQUIRE(r.hyper.depth.has_value());
      REQUIRE(r.hyper.b.has_value());
      CHECK(within_bin_envelope(n_cal, *r.hyper.depth, *r.hyper.b));
    }
    if (r.method == Method::kHsQab) CHECK(r.hyper.sigma_u2.has_value());
    CHECK(r.test.n == split_sizes(data.size(), rep.config.fractions)[3]);
  }
  for (std::size_t i = 1; i < rep.results.size(); ++i) {
    const auto& a = rep.results[i - 1];
    const auto& b = rep.results[i];
    CHECK((a.method < b.method || (a.method == b.method && a.seed < b.seed)));
  }
}

TEST_CASE("an impossible grid is reported, not fatal") {
  auto c = small_config();
  c.methods = {Method::kNone, Method::kQab};
  c.b_grid = {5000};
  const auto rep = run_sweep(small_synthetic(), c);
  CHECK(rep.results.size() == 2);
  REQUIRE(rep.failures.size() == 2);
  CHECK(rep.failures[0].method == Method::kQab);
}

TEST_CASE("sweep output is byte-identical across reruns and thread counts") {
  const auto data = small_synthetic();
  TempDir dir("sweep");
  auto c1 = small_config();
  auto c8 = small_config();
  c8.threads = 8;
  write_reports(run_sweep(data, c1), dir / "a");
  write_reports(run_sweep(data, c1), dir / "b");
  write_reports(run_sweep(data, c8), dir / "c");
  for (const char* f : {"results.csv", "summary.csv", "summary.json", "per_partition.csv", "failures.csv",
                        "resolved_config.json"}) {
    CAPTURE(f);
    const auto a = slurp(dir / "a" / f);
    CHECK_FALSE(a.empty());
    CHECK(a == slurp(dir / "b" / f));
    CHECK(a == slurp(dir / "c" / f));
  }
}

TEST_CASE("summary uses the sample standard deviation") {
  SweepReport rep;
  for (std::uint64_t s = 0; s < 3; ++s) {
    RunResult r{Method::kNone, s, {}, {}, {}};
    r.test.ce = 0.1 * static_cast<double>(s + 1);  // 0.1 0.2 0.3
    rep.results.push_back(r);
  }
  const auto sum = summarize(rep);
  const auto none = std::find_if(sum.begin(), sum.end(), [](const auto& m) { return m.method == Method::kNone; });
  REQUIRE(none != sum.end());
  CHECK(none->n_seeds == 3);
  CHECK(none->ce.mean == doctest::Approx(0.2));
  CHECK(none->ce.sd == doctest::Approx(0.1));
}

TEST_CASE("doubles are printed so they read back exactly") {
  for (double x : {0.1, 1.0 / 3.0, 1e-17, 0.0, 123456.789}) CHECK(std::stod(format_double(x)) == x);
}
