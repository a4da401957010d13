#include "toxtraj/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include "toxtraj/error.hpp"

namespace toxtraj {

KdTree::KdTree(const Matrix& points, std::size_t leaf_size) : points_(&points), dim_(points.cols) {
  if (points.rows == 0) throw InvalidArgument("KdTree: no points");
  if (points.rows > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("KdTree: too many points");
  order_.resize(points.rows);
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points.rows / std::max<std::size_t>(1, leaf_size) + 2);
  build(0, points.rows, std::max<std::size_t>(1, leaf_size));
}

std::int32_t KdTree::build(std::size_t begin, std::size_t end, std::size_t leaf_size) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end, -1, -1});
  lo_.resize(lo_.size() + dim_, std::numeric_limits<double>::infinity());
  hi_.resize(hi_.size() + dim_, -std::numeric_limits<double>::infinity());
  double* lo = lo_.data() + static_cast<std::size_t>(id) * dim_;
  double* hi = hi_.data() + static_cast<std::size_t>(id) * dim_;
  for (std::size_t i = begin; i < end; ++i) {
    const auto r = points_->row(order_[i]);
    for (std::size_t j = 0; j < dim_; ++j) {
      lo[j] = std::min(lo[j], r[j]);
      hi[j] = std::max(hi[j], r[j]);
    }
  }
  if (end - begin <= leaf_size) return id;
  std::size_t split_dim = 0;
  double spread = -1.0;
  for (std::size_t j = 0; j < dim_; ++j) {
    if (hi[j] - lo[j] > spread) {
      spread = hi[j] - lo[j];
      split_dim = j;
    }
  }
  if (!(spread > 0.0)) return id;  // all points coincide
  const std::size_t mid = begin + (end - begin) / 2;
  const Matrix& pts = *points_;
  std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(mid),
                   order_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::uint32_t a, std::uint32_t b) {
                     const double va = pts(a, split_dim), vb = pts(b, split_dim);
                     return va < vb || (va == vb && a < b);
                   });
  const std::int32_t left = build(begin, mid, leaf_size);
  const std::int32_t right = build(mid, end, leaf_size);
  nodes_[static_cast<std::size_t>(id)].left = left;
  nodes_[static_cast<std::size_t>(id)].right = right;
  return id;
}

double KdTree::box_squared_distance(std::size_t node, std::span<const double> q) const {
  const double* lo = lo_.data() + node * dim_;
  const double* hi = hi_.data() + node * dim_;
  double s = 0.0;
  for (std::size_t j = 0; j < dim_; ++j) {
    double d = 0.0;
    if (q[j] < lo[j]) d = lo[j] - q[j];
    else if (q[j] > hi[j]) d = q[j] - hi[j];
    s += d * d;
  }
  return s;
}

double KdTree::kth_neighbor_distance(std::span<const double> q, std::size_t k) const {
  if (k == 0 || k > points_->rows) throw InvalidArgument("kth_neighbor_distance: k out of range");
  std::priority_queue<double> best;  // max-heap of the k smallest squared distances
  std::vector<std::int32_t> stack{0};
  while (!stack.empty()) {
    const auto id = static_cast<std::size_t>(stack.back());
    stack.pop_back();
    if (best.size() == k && box_squared_distance(id, q) > best.top()) continue;
    const Node& n = nodes_[id];
    if (n.leaf()) {
      for (std::size_t i = n.begin; i < n.end; ++i) {
        const double d = squared_distance(q, points_->row(order_[i]));
        if (best.size() < k) best.push(d);
        else if (d < best.top()) {
          best.pop();
          best.push(d);
        }
      }
      continue;
    }
    // Visit the nearer child first.
    const double dl = box_squared_distance(static_cast<std::size_t>(n.left), q);
    const double dr = box_squared_distance(static_cast<std::size_t>(n.right), q);
    if (dl <= dr) {
      stack.push_back(n.right);
      stack.push_back(n.left);
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  return std::sqrt(best.top());
}

}  // namespace toxtraj
