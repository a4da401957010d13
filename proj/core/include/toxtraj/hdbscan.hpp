#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "toxtraj/matrix.hpp"

namespace toxtraj::hdbscan {

struct Params {
  std::size_t min_cluster_size = 5;
  std::size_t min_samples = 5;

  /// Throws InvalidArgument unless min_cluster_size >= 2 and
  /// 1 <= min_samples <= n.
  void validate(std::size_t n) const;
  bool operator==(const Params&) const = default;
};

enum class MstAlgorithm { automatic, prim, boruvka };

struct Options {
  MstAlgorithm mst = MstAlgorithm::automatic;
  /// automatic picks dense Prim below this many points, Borůvka otherwise.
  std::size_t dense_threshold = 4096;
  unsigned workers = 1;
};

struct Edge {
  std::uint32_t a = 0;  ///< a < b
  std::uint32_t b = 0;
  double weight = 0.0;
  bool operator==(const Edge&) const = default;
};

/// Strict total order on edges: weight, then smaller endpoint, then larger.
inline bool edge_less(const Edge& x, const Edge& y) {
  if (x.weight != y.weight) return x.weight < y.weight;
  if (x.a != y.a) return x.a < y.a;
  return x.b < y.b;
}

/// Distance to the min_samples-th nearest neighbour, the point itself being
/// the first.
std::vector<double> core_distances(const Matrix& points, std::size_t min_samples, const Options& options = {});

inline double mutual_reachability(double dist, double core_a, double core_b) {
  return std::max(dist, std::max(core_a, core_b));
}

/// Minimum spanning tree of the complete mutual-reachability graph, n - 1
/// edges sorted by edge_less. Under edge_less the tree is unique, so Prim and
/// Borůvka return the same edges.
std::vector<Edge> mutual_reachability_mst(const Matrix& points, std::span<const double> cores,
                                          const Options& options = {});

/// Condensed cluster tree. Cluster 0 is the root; every other cluster has a
/// parent with a smaller id.
struct CondensedTree {
  struct Cluster {
    std::int32_t parent = -1;
    double birth_lambda = 0.0;
    std::size_t size = 0;
    double stability = 0.0;
    std::vector<std::int32_t> children;
  };
  std::vector<Cluster> clusters;
  std::vector<std::int32_t> point_cluster;  ///< cluster each point falls out of
  std::vector<double> point_lambda;         ///< lambda at which it falls out
};

/// Builds the single-linkage hierarchy from the MST and condenses it.
/// lambda = 1 / weight; a zero-weight merge is never split and its points
/// fall out at lambda = +inf.
CondensedTree condense(std::span<const Edge> mst, std::size_t min_cluster_size, std::size_t n);

/// Excess-of-mass selection, root excluded. Returns a flag per cluster.
std::vector<bool> select_eom(const CondensedTree& tree);

struct Labeling {
  std::vector<int> labels;          ///< -1 = outlier, else 0..k-1
  std::vector<double> stabilities;  ///< per cluster id
  std::size_t n_clusters() const { return stabilities.size(); }
  std::size_t n_outliers() const;
};

/// Clusters are renumbered by their smallest member index.
Labeling label(const CondensedTree& tree, const std::vector<bool>& selected);

Labeling condense_and_extract(std::span<const Edge> mst, std::size_t min_cluster_size, std::size_t n);

Labeling run_hdbscan(const Matrix& points, const Params& params, const Options& options = {});

// Recursive driver --------------------------------------------------------

struct ClusterTreeNode {
  int node_id = 0;
  int level = 1;
  std::optional<int> parent;
  std::vector<std::size_t> member_rows;  ///< ascending rows of the input matrix
  Params params_used;
  std::vector<int> children;
  double stability = 0.0;

  bool operator==(const ClusterTreeNode&) const = default;
};

struct ClusterTree {
  std::size_t n_points = 0;
  Params params;
  int max_depth = 6;
  /// Pre-order; siblings ordered by smallest member row; node_id == index.
  std::vector<ClusterTreeNode> nodes;

  std::vector<int> roots() const;
  int depth() const;
  /// Rows of the input not captured by any level-1 node.
  std::vector<std::size_t> level1_outliers() const;
  bool operator==(const ClusterTree&) const = default;
};

inline constexpr int kDefaultMaxDepth = 6;

/// Clusters all rows, then re-clusters every resulting cluster with more
/// than min_cluster_size members on its own rows with the same params, down
/// to max_depth levels. Sibling sub-problems run in parallel.
ClusterTree recursive_cluster(const Matrix& points, const Params& params, int max_depth = kDefaultMaxDepth,
                              const Options& options = {});

Matrix select_rows(const Matrix& points, std::span<const std::size_t> rows);

void write_tree(const std::filesystem::path& path, const ClusterTree& tree);
ClusterTree read_tree(const std::filesystem::path& path);

}  // namespace toxtraj::hdbscan
