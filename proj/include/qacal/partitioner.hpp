#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "qacal/dataset.hpp"

namespace qacal {

// Index of a partition s in the range of the fixed mapping beta.
using PartitionId = int;
inline constexpr PartitionId kOutOfBounds = -1;

using EmbeddingView = std::span<const double>;

std::vector<EmbeddingView> embeddings_of(const Dataset& d);

class Partitioner {
 public:
  virtual ~Partitioner() = default;

  // A partition index in [0, num_partitions()) or kOutOfBounds.
  // Throws ValidationError on a dimension mismatch.
  virtual PartitionId assign(EmbeddingView embedding) const = 0;
  virtual std::size_t num_partitions() const = 0;
  virtual std::size_t dim() const = 0;
  virtual nlohmann::json to_json() const = 0;

  // Content hash of the serialized form; calibrator tables remember it.
  std::string id() const;
};

std::vector<PartitionId> assign_all(const Partitioner& p, const Dataset& d);

enum class SplitDimOrder { kCycle, kMaxVariance };

// Internal node k of the heap-ordered tree (children 2k+1, 2k+2).
// lower/upper bound the coordinate `coord` over the whole build set; a query
// outside them is out of bounds.
struct KdTreeNode {
  int coord = 0;
  double pivot = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

class KdTreePartitioner final : public Partitioner {
 public:
  // Recursive lower-median split to exactly `depth` levels; 2^depth leaves.
  static KdTreePartitioner build(std::span<const EmbeddingView> points, int depth,
                                 SplitDimOrder order = SplitDimOrder::kCycle);

  PartitionId assign(EmbeddingView embedding) const override;
  std::size_t num_partitions() const override { return std::size_t{1} << depth_; }
  std::size_t dim() const override { return dim_; }
  nlohmann::json to_json() const override;
  static KdTreePartitioner from_json(const nlohmann::json& j);

  int depth() const { return depth_; }
  SplitDimOrder order() const { return order_; }
  const std::vector<KdTreeNode>& nodes() const { return nodes_; }
  // Number of build points that landed in each leaf.
  const std::vector<std::size_t>& leaf_sizes() const { return leaf_sizes_; }

  // Axis-aligned region of a leaf as per-coordinate (lo, hi): queries in the
  // leaf satisfy lo < x <= hi on path coordinates (lo inclusive when it is a
  // bounding value), and all coordinates are unconstrained otherwise (+-inf).
  struct Interval {
    double lo;
    double hi;
    bool lo_inclusive;
  };
  std::vector<Interval> leaf_region(PartitionId leaf) const;

 private:
  int depth_ = 0;
  std::size_t dim_ = 0;
  SplitDimOrder order_ = SplitDimOrder::kCycle;
  std::vector<KdTreeNode> nodes_;
  std::vector<std::size_t> leaf_sizes_;
};

class KMeansPartitioner final : public Partitioner {
 public:
  // k-means++ seeding followed by Lloyd iterations to a fixpoint.
  static KMeansPartitioner build(std::span<const EmbeddingView> points, std::size_t k,
                                 std::uint64_t seed, int n_iter_max = 100);

  PartitionId assign(EmbeddingView embedding) const override;
  std::size_t num_partitions() const override { return centroids_.size(); }
  std::size_t dim() const override { return dim_; }
  nlohmann::json to_json() const override;
  static KMeansPartitioner from_json(const nlohmann::json& j);

  const std::vector<std::vector<double>>& centroids() const { return centroids_; }
  int iterations() const { return iterations_; }

 private:
  std::size_t dim_ = 0;
  std::uint64_t seed_ = 0;
  int n_iter_max_ = 100;
  int iterations_ = 0;
  std::vector<std::vector<double>> centroids_;
};

std::unique_ptr<Partitioner> partitioner_from_json(const nlohmann::json& j);
std::unique_ptr<Partitioner> load_partitioner(const std::filesystem::path& path);
void save_partitioner(const std::filesystem::path& path, const Partitioner& p);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace qacal
