#include "qacal/dataset.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "qacal/error.hpp"
#include "qacal/random.hpp"

namespace qacal {

using nlohmann::json;

std::string to_string(LabelKind kind) {
  return kind == LabelKind::kGroundTruth ? "ground_truth" : "proxy";
}

LabelKind label_kind_from_string(const std::string& s) {
  if (s == "ground_truth") return LabelKind::kGroundTruth;
  if (s == "proxy") return LabelKind::kProxy;
  throw ValidationError("unknown label_kind \"" + s + "\"");
}

void validate_record(const CalibrationRecord& r, std::size_t expected_dim) {
  if (!std::isfinite(r.confidence) || r.confidence < 0.0 || r.confidence > 1.0)
    throw ValidationError("confidence out of range");
  if (!std::isfinite(r.label) || r.label < 0.0 || r.label > 1.0)
    throw ValidationError("label out of range");
  if (r.label_kind == LabelKind::kGroundTruth && r.label != 0.0 && r.label != 1.0)
    throw ValidationError("ground_truth label must be 0 or 1");
  if (r.embedding.size() != expected_dim)
    throw ValidationError("embedding dimension mismatch: expected " +
                          std::to_string(expected_dim) + ", got " +
                          std::to_string(r.embedding.size()));
  for (double v : r.embedding)
    if (!std::isfinite(v)) throw ValidationError("non-finite embedding value");
}

void validate_dataset(const Dataset& d) {
  std::unordered_set<std::string> seen;
  for (const auto& r : d.records) {
    validate_record(r, d.embedding_dim);
    if (!seen.insert(r.id).second) throw ValidationError("duplicate record id \"" + r.id + "\"");
  }
}

namespace {

CalibrationRecord record_from_json(const json& j) {
  CalibrationRecord r;
  const auto& id = j.at("id");
  r.id = id.is_string() ? id.get<std::string>() : id.dump();
  r.embedding = j.at("embedding").get<std::vector<double>>();
  r.confidence = j.at("confidence").get<double>();
  r.label = j.at("label").get<double>();
  r.label_kind = j.contains("label_kind")
                     ? label_kind_from_string(j.at("label_kind").get<std::string>())
                     : LabelKind::kGroundTruth;
  if (j.contains("question") && !j["question"].is_null()) r.question = j["question"].get<std::string>();
  if (j.contains("answer") && !j["answer"].is_null()) r.answer = j["answer"].get<std::string>();
  return r;
}

json record_to_json(const CalibrationRecord& r) {
  json j;
  j["id"] = r.id;
  j["embedding"] = r.embedding;
  j["confidence"] = r.confidence;
  j["label"] = r.label;
  j["label_kind"] = to_string(r.label_kind);
  if (r.question) j["question"] = *r.question;
  if (r.answer) j["answer"] = *r.answer;
  return j;
}

}  // namespace

Dataset read_dataset(std::istream& in, std::optional<std::size_t> expected_dim) {
  Dataset d;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      CalibrationRecord r = record_from_json(json::parse(line));
      if (d.records.empty() && !expected_dim) {
        if (r.embedding.empty()) throw ValidationError("empty embedding");
        expected_dim = r.embedding.size();
      }
      validate_record(r, *expected_dim);
      if (!seen.insert(r.id).second) throw ValidationError("duplicate record id \"" + r.id + "\"");
      d.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (d.records.empty()) throw ValidationError("empty dataset");
  d.embedding_dim = *expected_dim;
  return d;
}

Dataset load_dataset(const std::filesystem::path& path, std::optional<std::size_t> expected_dim) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  Dataset d = read_dataset(in, expected_dim);
  d.metadata["source"] = path.filename().string();
  return d;
}

void write_dataset(std::ostream& out, const Dataset& d) {
  for (const auto& r : d.records) out << record_to_json(r).dump() << '\n';
}

void save_dataset(const std::filesystem::path& path, const Dataset& d) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_dataset(out, d);
}

std::array<std::size_t, 4> split_sizes(std::size_t n, const std::array<double, 4>& fractions) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ValidationError("split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ValidationError("split fractions must sum to 1");
  // The small slack keeps e.g. 10 * 0.1 from flooring to 0 after rounding.
  auto part = [n](double f) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f + 1e-9));
  };
  std::array<std::size_t, 4> sizes{part(fractions[0]), 0, part(fractions[2]), part(fractions[3])};
  sizes[1] = n - sizes[0] - sizes[2] - sizes[3];
  return sizes;
}

Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.embedding_dim = d.embedding_dim;
  out.metadata = d.metadata;
  out.records.reserve(indices.size());
  for (auto i : indices) out.records.push_back(d.records.at(i));
  return out;
}

DatasetSplit split_dataset(const Dataset& d, const SplitSpec& spec) {
  if (d.empty()) throw ValidationError("cannot split an empty dataset");
  const auto sizes = split_sizes(d.size(), spec.fractions);

  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Engine rng(spec.seed);
  shuffle(std::span<std::size_t>(order), rng);

  std::array<Dataset, 4> parts;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(offset),
                                 order.begin() + static_cast<std::ptrdiff_t>(offset + sizes[k]));
    parts[k] = subset(d, idx);
    offset += sizes[k];
  }
  return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2]), std::move(parts[3])};
}

}  // namespace qacal
