#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "qacal/dataset.hpp"
#include "qacal/random.hpp"

namespace qacal::testing {

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    Engine rng(std::hash<std::string>{}(tag) ^ reinterpret_cast<std::uintptr_t>(this));
    path_ = std::filesystem::temp_directory_path() / ("qacal-" + tag + "-" + std::to_string(rng() % 1000000007));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// n records with uniform embeddings in [0,1]^dim, uniform confidences and
// Bernoulli(confidence) labels.
inline Dataset random_dataset(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Engine rng(seed);
  Dataset d;
  d.embedding_dim = dim;
  for (std::size_t i = 0; i < n; ++i) {
    CalibrationRecord r;
    r.id = "r" + std::to_string(i);
    for (std::size_t m = 0; m < dim; ++m) r.embedding.push_back(uniform01(rng));
    r.confidence = uniform01(rng);
    r.label = uniform01(rng) < r.confidence ? 1.0 : 0.0;
    d.records.push_back(std::move(r));
  }
  return d;
}

}  // namespace qacal::testing
