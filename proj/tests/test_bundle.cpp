#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>

#include "doctest.h"
#include "qacal/bundle.hpp"
#include "qacal/error.hpp"
#include "test_support.hpp"

using namespace qacal;
using qacal::testing::random_dataset;
using qacal::testing::TempDir;

namespace {

std::shared_ptr<const Partitioner> tree_for(const Dataset& d, int depth) {
  const auto pts = embeddings_of(d);
  return std::make_shared<KdTreePartitioner>(KdTreePartitioner::build(pts, depth));
}

FitConfig config_for(Method m) {
  FitConfig c;
  c.method = m;
  c.b = 40;
  c.num_bins = 8;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_CASE("method names round trip in both spellings") {
  for (Method m : kAllMethods) {
    CHECK(method_from_string(to_string(m)) == m);
    CHECK(method_from_string(display_name(m)) == m);
  }
  CHECK(to_string(Method::kHsQab) == "hs-qab");
  CHECK(display_name(Method::kScaleBin) == "S-B");
  CHECK_THROWS_AS(method_from_string("isotonic"), ValidationError);
}

TEST_CASE("partition-aware methods demand a partitioner") {
  const auto d = random_dataset(400, 3, 1);
  for (Method m : {Method::kQab, Method::kSQab, Method::kHsQab}) {
    try {
      fit_calibrator(d, config_for(m));
      FAIL("expected a validation error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("--partitioner") != std::string::npos);
    }
  }
  CHECK_NOTHROW(fit_calibrator(d, config_for(Method::kUmd)));
}

TEST_CASE("every method survives a save and load unchanged") {
  const auto train = random_dataset(2000, 3, 2);
  const auto test = random_dataset(300, 3, 3);
  const auto tree = tree_for(train, 2);
  TempDir dir("bundle");
  for (Method m : kAllMethods) {
    CAPTURE(to_string(m));
    const auto fc = fit_calibrator(train, config_for(m), tree, &test);
    const auto path = dir / (to_string(m) + ".json");
    fc.save(path);
    const auto back = FittedCalibrator::load(path);
    CHECK(back.method() == m);
    CHECK(back.nu_hat() == fc.nu_hat());
    CHECK(back.predict_all(test) == fc.predict_all(test));
    for (double p : fc.predict_all(test)) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
  }
}

TEST_CASE("none is the identity") {
  const auto d = random_dataset(100, 2, 4);
  const auto fc = fit_calibrator(d, config_for(Method::kNone));
  const auto p = fc.predict_all(d);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(p[i] == d.records[i].confidence);
}

TEST_CASE("binned methods output at most as many values as bins") {
  const auto train = random_dataset(2000, 3, 5);
  const auto test = random_dataset(1000, 3, 6);
  for (Method m : {Method::kUmd, Method::kScaleBin}) {
    const auto p = fit_calibrator(train, config_for(m)).predict_all(test);
    CHECK(std::set<double>(p.begin(), p.end()).size() <= 8);
  }
}

TEST_CASE("platt is monotone in the score") {
  const auto d = random_dataset(1500, 2, 7);
  const auto fc = fit_calibrator(d, config_for(Method::kPlatt));
  const std::vector<double> e{0.5, 0.5};
  for (double h = 0.01; h < 0.99; h += 0.01) CHECK(fc.predict(e, h + 0.01) >= fc.predict(e, h));
}

TEST_CASE("depth-0 QA binning reproduces plain UMD") {
  const auto train = random_dataset(2000, 3, 8);
  const auto test = random_dataset(500, 3, 9);
  auto qab = config_for(Method::kQab);
  qab.b = 250;
  auto umd = config_for(Method::kUmd);
  umd.num_bins = 8;
  const auto a = fit_calibrator(train, qab, tree_for(train, 0)).predict_all(test);
  const auto b = fit_calibrator(train, umd).predict_all(test);
  CHECK(a == b);
}

TEST_CASE("hs-qab records the chosen prior variances") {
  const auto train = random_dataset(1500, 3, 10);
  const auto tune = random_dataset(400, 3, 11);
  const auto fc = fit_calibrator(train, config_for(Method::kHsQab), tree_for(train, 1), &tune);
  REQUIRE(fc.config().sigma_u2.has_value());
  REQUIRE(fc.config().sigma_v2.has_value());
  const auto& grid = fc.config().variance_grid;
  CHECK(std::find(grid.begin(), grid.end(), *fc.config().sigma_u2) != grid.end());

  auto fixed = config_for(Method::kHsQab);
  fixed.sigma_u2 = 0.5;
  fixed.sigma_v2 = 0.25;
  const auto g = fit_calibrator(train, fixed, tree_for(train, 1), &tune);
  CHECK(*g.config().sigma_u2 == 0.5);
  CHECK(*g.config().sigma_v2 == 0.25);
}

TEST_CASE("fit is deterministic for a fixed seed") {
  const auto train = random_dataset(1500, 3, 12);
  const auto tree = tree_for(train, 2);
  for (Method m : {Method::kScaleBin, Method::kSQab, Method::kHsQab}) {
    const auto a = fit_calibrator(train, config_for(m), tree).predict_all(train);
    const auto b = fit_calibrator(train, config_for(m), tree).predict_all(train);
    CHECK(a == b);
  }
}

TEST_CASE("load rejects tampered or incomplete bundles") {
  const auto train = random_dataset(1000, 3, 13);
  TempDir dir("bundle-bad");
  const auto fc = fit_calibrator(train, config_for(Method::kQab), tree_for(train, 2));
  const auto path = dir / "m.json";
  fc.save(path);

  SUBCASE("different partitioner") {
    const auto other = tree_for(random_dataset(1000, 3, 14), 2);
    save_partitioner(dir / "m.partitioner.json", *other);
    CHECK_THROWS_AS(FittedCalibrator::load(path), ValidationError);
  }
  SUBCASE("missing component") {
    std::filesystem::remove(dir / "m.table.json");
    CHECK_THROWS_AS(FittedCalibrator::load(path), ValidationError);
  }
  SUBCASE("not a bundle") {
    std::ofstream(path) << "{\"format\": \"something else\"}";
    CHECK_THROWS_AS(FittedCalibrator::load(path), ValidationError);
  }
}

TEST_CASE("partitioner dimension must match the data") {
  const auto train = random_dataset(500, 3, 15);
  const auto other = tree_for(random_dataset(500, 2, 16), 1);
  CHECK_THROWS_AS(fit_calibrator(train, config_for(Method::kQab), other), ValidationError);
}
