#pragma once

#include <algorithm>
#include <cstdint>

#include "toxtraj/matrix.hpp"
#include "toxtraj/rng.hpp"

namespace testing_support {

struct ClusterInstance {
  toxtraj::Matrix points;
  std::size_t min_cluster_size = 5;
  std::size_t min_samples = 5;
};

// Gaussian blob mixture with uniform background noise; n <= max_n, dim <= 5.
inline ClusterInstance random_instance(std::uint64_t seed, std::size_t max_n = 250) {
  using toxtraj::fnv1a;
  toxtraj::Rng rng = toxtraj::Rng::stream(seed, fnv1a("hdbscan-instance"));
  ClusterInstance inst;
  const std::size_t n = 20 + rng.below(max_n - 19);
  const std::size_t dim = 1 + rng.below(5);
  const std::size_t blobs = 1 + rng.below(5);
  std::vector<std::vector<double>> centres(blobs, std::vector<double>(dim));
  std::vector<double> spread(blobs);
  for (std::size_t b = 0; b < blobs; ++b) {
    for (auto& c : centres[b]) c = rng.uniform(-10.0, 10.0);
    spread[b] = rng.uniform(0.3, 2.0);
  }
  inst.points = toxtraj::Matrix(n, dim);
  for (std::size_t i = 0; i < n; ++i) {
    const bool noise = rng.uniform() < 0.1;
    const std::size_t b = rng.below(blobs);
    for (std::size_t j = 0; j < dim; ++j)
      inst.points(i, j) = noise ? rng.uniform(-12.0, 12.0) : centres[b][j] + spread[b] * rng.normal();
  }
  inst.min_cluster_size = 2 + rng.below(std::min<std::size_t>(20, n / 4));
  inst.min_samples = 1 + rng.below(std::min<std::size_t>(inst.min_cluster_size, 10));
  return inst;
}

struct TopicSet {
  toxtraj::Matrix points;
  std::vector<int> labels;
};

// n_topics directions along the coordinate axes of a dim-dimensional space,
// each with isotropic noise; separable under cosine similarity.
inline TopicSet planted_topics(std::size_t n_topics, std::size_t per_topic, std::size_t dim, double radius,
                               double noise, std::uint64_t seed) {
  using toxtraj::fnv1a;
  TopicSet s;
  s.points = toxtraj::Matrix(n_topics * per_topic, dim);
  for (std::size_t t = 0; t < n_topics; ++t) {
    toxtraj::Rng rng = toxtraj::Rng::stream(seed, fnv1a("topics"), t);
    for (std::size_t i = 0; i < per_topic; ++i) {
      const std::size_t r = t * per_topic + i;
      for (std::size_t j = 0; j < dim; ++j) s.points(r, j) = (j == t % dim ? radius : 0.0) + noise * rng.normal();
      s.labels.push_back(static_cast<int>(t));
    }
  }
  return s;
}

}  // namespace testing_support
