#include "qacal/partitioner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

#include "qacal/error.hpp"
#include "qacal/random.hpp"

namespace qacal {

using nlohmann::json;

std::vector<EmbeddingView> embeddings_of(const Dataset& d) {
  std::vector<EmbeddingView> out;
  out.reserve(d.size());
  for (const auto& r : d.records) out.emplace_back(r.embedding);
  return out;
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string Partitioner::id() const { return fnv1a_hex(to_json().dump()); }

std::vector<PartitionId> assign_all(const Partitioner& p, const Dataset& d) {
  std::vector<PartitionId> out;
  out.reserve(d.size());
  for (const auto& r : d.records) out.push_back(p.assign(r.embedding));
  return out;
}

namespace {

void check_points(std::span<const EmbeddingView> points) {
  if (points.empty()) throw ValidationError("no points to build a partitioner from");
  const std::size_t dim = points.front().size();
  if (dim == 0) throw ValidationError("zero-dimensional embeddings");
  for (const auto& p : points)
    if (p.size() != dim) throw ValidationError("embedding dimension mismatch");
}

void check_query(EmbeddingView e, std::size_t dim) {
  if (e.size() != dim)
    throw ValidationError("embedding dimension mismatch: expected " + std::to_string(dim) +
                          ", got " + std::to_string(e.size()));
}

struct KdBuilder {
  std::span<const EmbeddingView> points;
  int depth;
  SplitDimOrder order;
  std::vector<double> min_coord, max_coord;
  std::vector<KdTreeNode> nodes;
  std::vector<std::size_t> leaf_sizes;

  int choose_coord(const std::vector<std::size_t>& idx, int level) const {
    const auto dim = min_coord.size();
    if (order == SplitDimOrder::kCycle || idx.size() < 2)
      return static_cast<int>(static_cast<std::size_t>(level) % dim);
    int best = 0;
    double best_var = -1.0;
    for (std::size_t m = 0; m < dim; ++m) {
      double mean = 0.0;
      for (auto i : idx) mean += points[i][m];
      mean /= static_cast<double>(idx.size());
      double var = 0.0;
      for (auto i : idx) var += (points[i][m] - mean) * (points[i][m] - mean);
      if (var > best_var) {
        best_var = var;
        best = static_cast<int>(m);
      }
    }
    return best;
  }

  void split(std::size_t k, int level, std::vector<std::size_t> idx) {
    if (level == depth) {
      leaf_sizes[k - (nodes.size())] = idx.size();
      return;
    }
    KdTreeNode& node = nodes[k];
    node.coord = choose_coord(idx, level);
    const auto m = static_cast<std::size_t>(node.coord);
    node.lower = min_coord[m];
    node.upper = max_coord[m];
    if (idx.empty()) {
      node.pivot = node.upper;
    } else {
      // Lower median: element ceil(n/2)-1 of the sorted pivot coordinate.
      std::vector<double> values;
      values.reserve(idx.size());
      for (auto i : idx) values.push_back(points[i][m]);
      const std::size_t pos = (idx.size() + 1) / 2 - 1;
      std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(pos), values.end());
      node.pivot = values[pos];
    }
    const double pivot = node.pivot;
    std::vector<std::size_t> left, right;
    for (auto i : idx) (points[i][m] <= pivot ? left : right).push_back(i);
    split(2 * k + 1, level + 1, std::move(left));
    split(2 * k + 2, level + 1, std::move(right));
  }
};

std::string order_name(SplitDimOrder o) { return o == SplitDimOrder::kCycle ? "cycle" : "max_variance"; }

SplitDimOrder order_from_name(const std::string& s) {
  if (s == "cycle") return SplitDimOrder::kCycle;
  if (s == "max_variance") return SplitDimOrder::kMaxVariance;
  throw ValidationError("unknown dim_order \"" + s + "\"");
}

}  // namespace

KdTreePartitioner KdTreePartitioner::build(std::span<const EmbeddingView> points, int depth,
                                           SplitDimOrder order) {
  check_points(points);
  if (depth < 0) throw ValidationError("kd-tree depth must be non-negative");
  if (depth > 30 || points.size() < (std::size_t{1} << depth))
    throw ValidationError("too few points (" + std::to_string(points.size()) +
                          ") for kd-tree depth " + std::to_string(depth));
  const std::size_t dim = points.front().size();

  KdBuilder b{points, depth, order, {}, {}, {}, {}};
  b.min_coord.assign(dim, std::numeric_limits<double>::infinity());
  b.max_coord.assign(dim, -std::numeric_limits<double>::infinity());
  for (const auto& p : points)
    for (std::size_t m = 0; m < dim; ++m) {
      b.min_coord[m] = std::min(b.min_coord[m], p[m]);
      b.max_coord[m] = std::max(b.max_coord[m], p[m]);
    }
  const std::size_t leaves = std::size_t{1} << depth;
  b.nodes.resize(leaves - 1);
  b.leaf_sizes.assign(leaves, 0);
  std::vector<std::size_t> all(points.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  b.split(0, 0, std::move(all));

  KdTreePartitioner t;
  t.depth_ = depth;
  t.dim_ = dim;
  t.order_ = order;
  t.nodes_ = std::move(b.nodes);
  t.leaf_sizes_ = std::move(b.leaf_sizes);
  return t;
}

PartitionId KdTreePartitioner::assign(EmbeddingView e) const {
  check_query(e, dim_);
  std::size_t k = 0;
  for (int level = 0; level < depth_; ++level) {
    const KdTreeNode& n = nodes_[k];
    const double x = e[static_cast<std::size_t>(n.coord)];
    if (!(x >= n.lower && x <= n.upper)) return kOutOfBounds;
    k = x <= n.pivot ? 2 * k + 1 : 2 * k + 2;
  }
  return static_cast<PartitionId>(k - nodes_.size());
}

std::vector<KdTreePartitioner::Interval> KdTreePartitioner::leaf_region(PartitionId leaf) const {
  if (leaf < 0 || static_cast<std::size_t>(leaf) >= num_partitions())
    throw ValidationError("leaf index out of range");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<Interval> box(dim_, Interval{-inf, inf, false});
  // Walk up from the leaf collecting the path constraints.
  std::size_t k = static_cast<std::size_t>(leaf) + nodes_.size();
  while (k > 0) {
    const std::size_t parent = (k - 1) / 2;
    const KdTreeNode& n = nodes_[parent];
    auto& iv = box[static_cast<std::size_t>(n.coord)];
    const bool is_left = (k == 2 * parent + 1);
    if (is_left) {
      iv.hi = std::min(iv.hi, n.pivot);
    } else if (n.pivot >= iv.lo) {
      iv.lo = n.pivot;
      iv.lo_inclusive = false;
    }
    if (n.lower > iv.lo || (n.lower == iv.lo && iv.lo_inclusive)) {
      iv.lo = n.lower;
      iv.lo_inclusive = true;
    }
    iv.hi = std::min(iv.hi, n.upper);
    k = parent;
  }
  return box;
}

json KdTreePartitioner::to_json() const {
  json nodes = json::array();
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    const auto& n = nodes_[k];
    nodes.push_back({{"k", k}, {"coord", n.coord}, {"pivot", n.pivot}, {"lower", n.lower}, {"upper", n.upper}});
  }
  return {{"format", "kdtree.v1"}, {"depth", depth_},        {"dim", dim_},
          {"dim_order", order_name(order_)}, {"nodes", nodes}, {"leaf_sizes", leaf_sizes_}};
}

KdTreePartitioner KdTreePartitioner::from_json(const json& j) {
  if (j.at("format") != "kdtree.v1") throw ValidationError("not a kdtree.v1 partitioner");
  KdTreePartitioner t;
  t.depth_ = j.at("depth").get<int>();
  t.dim_ = j.at("dim").get<std::size_t>();
  t.order_ = order_from_name(j.at("dim_order").get<std::string>());
  if (t.depth_ < 0 || t.depth_ > 30) throw ValidationError("bad kd-tree depth");
  const std::size_t expected = (std::size_t{1} << t.depth_) - 1;
  const auto& nodes = j.at("nodes");
  if (nodes.size() != expected) throw ValidationError("kd-tree node count does not match depth");
  t.nodes_.resize(expected);
  for (const auto& n : nodes) {
    const auto k = n.at("k").get<std::size_t>();
    if (k >= expected) throw ValidationError("kd-tree node key out of range");
    auto& node = t.nodes_[k];
    node.coord = n.at("coord").get<int>();
    if (node.coord < 0 || static_cast<std::size_t>(node.coord) >= t.dim_)
      throw ValidationError("kd-tree coordinate out of range");
    node.pivot = n.at("pivot").get<double>();
    node.lower = n.at("lower").get<double>();
    node.upper = n.at("upper").get<double>();
  }
  t.leaf_sizes_ = j.value("leaf_sizes", std::vector<std::size_t>(expected + 1, 0));
  return t;
}

namespace {

double squared_distance(EmbeddingView a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t m = 0; m < b.size(); ++m) s += (a[m] - b[m]) * (a[m] - b[m]);
  return s;
}

std::size_t nearest(EmbeddingView e, const std::vector<std::vector<double>>& centroids) {
  std::size_t best = 0;
  double best_d = squared_distance(e, centroids[0]);
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double d = squared_distance(e, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

KMeansPartitioner KMeansPartitioner::build(std::span<const EmbeddingView> points, std::size_t k,
                                           std::uint64_t seed, int n_iter_max) {
  check_points(points);
  if (k == 0) throw ValidationError("k-means needs k >= 1");
  std::set<std::vector<double>> distinct;
  for (const auto& p : points) {
    distinct.emplace(p.begin(), p.end());
    if (distinct.size() >= k) break;
  }
  if (distinct.size() < k)
    throw ValidationError("k = " + std::to_string(k) + " exceeds the number of distinct points");

  const std::size_t n = points.size();
  const std::size_t dim = points.front().size();
  Engine rng(seed);

  std::vector<std::vector<double>> centroids;
  const auto first = static_cast<std::size_t>(uniform_index(rng, n));
  centroids.emplace_back(points[first].begin(), points[first].end());
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(points[i], centroids[0]);
  while (centroids.size() < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    const double target = uniform01(rng) * total;
    std::size_t pick = n;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      acc += d2[i];
      pick = i;
      if (acc > target) break;
    }
    centroids.emplace_back(points[pick].begin(), points[pick].end());
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], squared_distance(points[i], centroids.back()));
  }

  std::vector<std::size_t> assignment(n, k);
  int iter = 0;
  for (; iter < n_iter_max; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = nearest(points[i], centroids);
      if (c != assignment[i]) {
        assignment[i] = c;
        changed = true;
      }
    }
    if (!changed) break;
    std::vector<std::vector<double>> sums(k, std::vector<double>(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assignment[i]];
      for (std::size_t m = 0; m < dim; ++m) sums[assignment[i]][m] += points[i][m];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (std::size_t m = 0; m < dim; ++m)
        centroids[c][m] = sums[c][m] / static_cast<double>(counts[c]);
    }
  }

  KMeansPartitioner p;
  p.dim_ = dim;
  p.seed_ = seed;
  p.n_iter_max_ = n_iter_max;
  p.iterations_ = iter;
  p.centroids_ = std::move(centroids);
  return p;
}

PartitionId KMeansPartitioner::assign(EmbeddingView e) const {
  check_query(e, dim_);
  return static_cast<PartitionId>(nearest(e, centroids_));
}

json KMeansPartitioner::to_json() const {
  return {{"format", "kmeans.v1"}, {"dim", dim_}, {"seed", seed_},
          {"n_iter_max", n_iter_max_}, {"centroids", centroids_}};
}

KMeansPartitioner KMeansPartitioner::from_json(const json& j) {
  if (j.at("format") != "kmeans.v1") throw ValidationError("not a kmeans.v1 partitioner");
  KMeansPartitioner p;
  p.dim_ = j.at("dim").get<std::size_t>();
  p.seed_ = j.value("seed", std::uint64_t{0});
  p.n_iter_max_ = j.value("n_iter_max", 100);
  p.centroids_ = j.at("centroids").get<std::vector<std::vector<double>>>();
  if (p.centroids_.empty()) throw ValidationError("k-means partitioner without centroids");
  for (const auto& c : p.centroids_)
    if (c.size() != p.dim_) throw ValidationError("centroid dimension mismatch");
  return p;
}

std::unique_ptr<Partitioner> partitioner_from_json(const json& j) {
  const auto format = j.at("format").get<std::string>();
  if (format == "kdtree.v1") return std::make_unique<KdTreePartitioner>(KdTreePartitioner::from_json(j));
  if (format == "kmeans.v1") return std::make_unique<KMeansPartitioner>(KMeansPartitioner::from_json(j));
  throw ValidationError("unknown partitioner format \"" + format + "\"");
}

std::unique_ptr<Partitioner> load_partitioner(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open partitioner file " + path.string());
  try {
    return partitioner_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError("malformed partitioner file " + path.string() + ": " + e.what());
  }
}

void save_partitioner(const std::filesystem::path& path, const Partitioner& p) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << p.to_json().dump(1) << '\n';
}

}  // namespace qacal
