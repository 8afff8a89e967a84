#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "qacal/dataset.hpp"
#include "qacal/error.hpp"
#include "test_support.hpp"

using namespace qacal;

namespace {

std::string four_lines() {
  return R"({"id":"a","embedding":[0.1,0.2],"confidence":0.9,"label":1,"label_kind":"ground_truth"}
{"id":"b","embedding":[0.3,0.4],"confidence":0.2,"label":0}
{"id":"c","embedding":[0.5,0.6],"confidence":0.5,"label":0.25,"label_kind":"proxy","question":"q?","answer":"a"}
{"id":"d","embedding":[0.7,0.8],"confidence":0.0,"label":1,"label_kind":"ground_truth"}
)";
}

std::string error_of(const std::string& text) {
  std::istringstream in(text);
  try {
    read_dataset(in);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("four records with M=2 load with their fields") {
  std::istringstream in(four_lines());
  const Dataset d = read_dataset(in);
  CHECK(d.size() == 4);
  CHECK(d.embedding_dim == 2);
  CHECK(d.records[2].label_kind == LabelKind::kProxy);
  CHECK(d.records[2].label == 0.25);
  CHECK(d.records[2].question == "q?");
  CHECK(d.records[1].label_kind == LabelKind::kGroundTruth);
  CHECK_FALSE(d.records[0].question.has_value());
}

TEST_CASE("validation errors carry the line number") {
  const std::string bad_conf =
      R"({"id":"a","embedding":[0.1],"confidence":0.5,"label":1})"
      "\n"
      R"({"id":"b","embedding":[0.1],"confidence":1.3,"label":1})"
      "\n";
  const auto msg = error_of(bad_conf);
  CHECK(msg.find("line 2") != std::string::npos);
  CHECK(msg.find("confidence out of range") != std::string::npos);

  CHECK(error_of(R"({"id":"a","embedding":[0.1],"confidence":0.5,"label":1.5})").find("label out of range") !=
        std::string::npos);
  CHECK(error_of(R"({"id":"a","embedding":[0.1],"confidence":0.5,"label":0.5})").find("0 or 1") !=
        std::string::npos);
  CHECK(error_of("{not json\n").find("line 1") != std::string::npos);
  CHECK(error_of(R"({"id":"a","confidence":0.5,"label":1})").find("line 1") != std::string::npos);
}

TEST_CASE("empty input is rejected") {
  CHECK(error_of("").find("empty dataset") != std::string::npos);
  CHECK(error_of("\n\n").find("empty dataset") != std::string::npos);
}

TEST_CASE("dimension and id invariants") {
  const std::string mixed =
      R"({"id":"a","embedding":[0.1,0.2],"confidence":0.5,"label":1})"
      "\n"
      R"({"id":"b","embedding":[0.1],"confidence":0.5,"label":1})"
      "\n";
  CHECK(error_of(mixed).find("line 2") != std::string::npos);
  const std::string dup =
      R"({"id":"a","embedding":[0.1],"confidence":0.5,"label":1})"
      "\n"
      R"({"id":"a","embedding":[0.1],"confidence":0.5,"label":1})"
      "\n";
  CHECK(error_of(dup).find("duplicate") != std::string::npos);

  std::istringstream in(four_lines());
  CHECK_THROWS_AS(read_dataset(in, 3), ValidationError);
}

TEST_CASE("save and load round-trip bit-exactly") {
  testing::TempDir tmp("dataset");
  Dataset d = testing::random_dataset(200, 5, 42);
  d.records[3].label_kind = LabelKind::kProxy;
  d.records[3].label = 0.1 + 0.2;  // not representable in short decimal
  d.records[7].question = "what \"is\" this?\n";
  d.records[7].answer = "ünïcode";
  d.records[9].confidence = 1.0 / 3.0;
  d.records[9].embedding[0] = 5e-324;
  save_dataset(tmp / "d.jsonl", d);
  const Dataset back = load_dataset(tmp / "d.jsonl");
  REQUIRE(back.size() == d.size());
  CHECK(back.embedding_dim == 5);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto& a = d.records[i];
    const auto& b = back.records[i];
    CHECK(a.id == b.id);
    CHECK(std::memcmp(&a.confidence, &b.confidence, sizeof(double)) == 0);
    CHECK(std::memcmp(&a.label, &b.label, sizeof(double)) == 0);
    CHECK(a.embedding == b.embedding);
    CHECK(a.label_kind == b.label_kind);
    CHECK(a.question == b.question);
    CHECK(a.answer == b.answer);
  }
}

TEST_CASE("load reports a missing file") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/qacal.jsonl"), ValidationError);
}

TEST_CASE("split sizes follow floor slicing with the remainder on the calibration part") {
  CHECK(split_sizes(10, {0.2, 0.6, 0.1, 0.1}) == std::array<std::size_t, 4>{2, 6, 1, 1});
  CHECK(split_sizes(100, {0.2, 0.6, 0.1, 0.1}) == std::array<std::size_t, 4>{20, 60, 10, 10});
  CHECK(split_sizes(17, {0.2, 0.6, 0.1, 0.1}) == std::array<std::size_t, 4>{3, 12, 1, 1});
  CHECK(split_sizes(5, {0.0, 1.0, 0.0, 0.0}) == std::array<std::size_t, 4>{0, 5, 0, 0});
  CHECK_THROWS_AS(split_sizes(10, {0.2, 0.6, 0.1, 0.2}), ValidationError);
  CHECK_THROWS_AS(split_sizes(10, {-0.1, 0.9, 0.1, 0.1}), ValidationError);
}

TEST_CASE("splits are deterministic and partition the ids") {
  const Dataset d = testing::random_dataset(137, 2, 3);
  Engine rng(99);
  for (int trial = 0; trial < 25; ++trial) {
    double w[4], total = 0.0;
    for (double& x : w) total += (x = uniform01(rng) + 0.01);
    std::array<double, 4> f{w[0] / total, w[1] / total, w[2] / total, 0.0};
    f[3] = 1.0 - f[0] - f[1] - f[2];
    const SplitSpec spec{f, rng()};
    const auto s1 = split_dataset(d, spec);
    const auto s2 = split_dataset(d, spec);
    std::multiset<std::string> ids;
    for (const Dataset* part : {&s1.tree, &s1.cal, &s1.tune, &s1.test})
      for (const auto& r : part->records) ids.insert(r.id);
    CHECK(ids.size() == d.size());
    CHECK(std::set<std::string>(ids.begin(), ids.end()).size() == d.size());
    CHECK(s1.cal.size() == split_sizes(d.size(), f)[1]);
    auto same = [](const Dataset& a, const Dataset& b) {
      if (a.size() != b.size()) return false;
      for (std::size_t i = 0; i < a.size(); ++i)
        if (a.records[i].id != b.records[i].id) return false;
      return true;
    };
    CHECK(same(s1.tree, s2.tree));
    CHECK(same(s1.cal, s2.cal));
    CHECK(same(s1.tune, s2.tune));
    CHECK(same(s1.test, s2.test));
  }
}

TEST_CASE("different seeds shuffle differently") {
  const Dataset d = testing::random_dataset(50, 1, 1);
  const auto a = split_dataset(d, {{0.2, 0.6, 0.1, 0.1}, 1});
  const auto b = split_dataset(d, {{0.2, 0.6, 0.1, 0.1}, 2});
  bool differ = false;
  for (std::size_t i = 0; i < a.cal.size(); ++i) differ |= a.cal.records[i].id != b.cal.records[i].id;
  CHECK(differ);
}
