#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qacal {

enum class LabelKind { kGroundTruth, kProxy };

std::string to_string(LabelKind kind);
LabelKind label_kind_from_string(const std::string& s);

// One (embedding, confidence, label) observation.
struct CalibrationRecord {
  std::string id;
  std::vector<double> embedding;
  double confidence = 0.0;
  double label = 0.0;
  LabelKind label_kind = LabelKind::kGroundTruth;
  std::optional<std::string> question;
  std::optional<std::string> answer;
};

struct Dataset {
  std::vector<CalibrationRecord> records;
  std::size_t embedding_dim = 0;
  std::map<std::string, std::string> metadata;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
};

// Throws ValidationError if a record breaks the range rules or the
// dataset-level invariants (unique ids, constant embedding dimension).
void validate_record(const CalibrationRecord& r, std::size_t expected_dim);
void validate_dataset(const Dataset& d);

// JSONL, one record per line. Errors carry the 1-based line number.
Dataset read_dataset(std::istream& in,
                     std::optional<std::size_t> expected_dim = std::nullopt);
Dataset load_dataset(const std::filesystem::path& path,
                     std::optional<std::size_t> expected_dim = std::nullopt);

void write_dataset(std::ostream& out, const Dataset& d);
void save_dataset(const std::filesystem::path& path, const Dataset& d);

struct SplitSpec {
  std::array<double, 4> fractions{0.20, 0.60, 0.10, 0.10};
  std::uint64_t seed = 0;
};

// tree / calibration / tuning / test parts.
struct DatasetSplit {
  Dataset tree;
  Dataset cal;
  Dataset tune;
  Dataset test;
};

// Part sizes are floor(N * f_k) for the tree, tune and test parts; the
// rounding remainder goes to the calibration part.
std::array<std::size_t, 4> split_sizes(std::size_t n, const std::array<double, 4>& fractions);

DatasetSplit split_dataset(const Dataset& d, const SplitSpec& spec);

// Subset in the order given by `indices`; metadata and dimension are kept.
Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices);

}  // namespace qacal
