#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "toxtraj/matrix.hpp"

namespace toxtraj {

/// Squared Euclidean distance, summed in coordinate order. Every distance in
/// the clustering code goes through this one function so different search
/// strategies agree bit-for-bit.
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

/// Static k-d tree over the rows of a matrix (the matrix must outlive it).
/// Nodes carry tight bounding boxes and split on the widest dimension.
class KdTree {
 public:
  struct Node {
    std::size_t begin = 0;  ///< range into order()
    std::size_t end = 0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    bool leaf() const { return left < 0; }
  };

  explicit KdTree(const Matrix& points, std::size_t leaf_size = 24);

  const Matrix& points() const { return *points_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  /// Row indices, permuted so every node covers a contiguous range.
  const std::vector<std::uint32_t>& order() const { return order_; }
  std::span<const double> lower(std::size_t node) const { return {lo_.data() + node * dim_, dim_}; }
  std::span<const double> upper(std::size_t node) const { return {hi_.data() + node * dim_, dim_}; }

  /// Squared distance from q to the node's box (0 inside).
  double box_squared_distance(std::size_t node, std::span<const double> q) const;

  /// Distance to the k-th nearest row of q, counting rows at distance 0
  /// (including q itself when it is a row). Requires 1 <= k <= rows.
  double kth_neighbor_distance(std::span<const double> q, std::size_t k) const;

 private:
  std::int32_t build(std::size_t begin, std::size_t end, std::size_t leaf_size);

  const Matrix* points_;
  std::size_t dim_;
  std::vector<Node> nodes_;
  std::vector<std::uint32_t> order_;
  std::vector<double> lo_, hi_;
};

}  // namespace toxtraj
