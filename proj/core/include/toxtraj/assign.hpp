#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "toxtraj/matrix.hpp"

namespace toxtraj::assign {

inline constexpr std::size_t kDefaultK = 15;

struct KnnModel {
  Matrix points;  ///< unit-normalised training rows
  std::vector<int> labels;
  std::size_t k = kDefaultK;
};

/// Rejects zero-norm rows, k > m, and negative labels.
KnnModel fit_knn(const Matrix& points, std::span<const int> labels, std::size_t k = kDefaultK);

struct Neighbor {
  std::size_t index = 0;
  double similarity = 0.0;
};

/// The k most cosine-similar training rows, ties broken by training index.
std::vector<Neighbor> nearest_neighbors(const KnnModel& model, std::span<const double> query);

/// Majority vote; ties go to the higher summed similarity, then the smaller
/// topic id.
int predict_topic(const KnnModel& model, std::span<const double> query);

std::vector<int> predict_all(const KnnModel& model, const Matrix& queries, unsigned workers = 1);

struct F1Scores {
  double macro_f1 = 0.0;  ///< 0..100, mean over classes seen in truth or predictions
  double micro_f1 = 0.0;  ///< 0..100
  std::size_t n = 0;
};

F1Scores evaluate_f1(std::span<const int> truth, std::span<const int> predicted);
F1Scores evaluate_f1(const KnnModel& model, const Matrix& holdout, std::span<const int> truth, unsigned workers = 1);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per label, floor(test_fraction * count) indices go to the test side,
/// chosen uniformly from the stream (seed, label). Outputs are ascending.
Split stratified_split(std::span<const int> labels, double test_fraction = 0.2, std::uint64_t seed = 0);

struct TopicRun {
  int topic = -1;  ///< -1 for unlabeled steps
  std::size_t begin = 0;
  std::size_t end = 0;  ///< inclusive
  bool operator==(const TopicRun&) const = default;
};

struct LabeledTrajectory {
  std::vector<std::optional<int>> labels;  ///< nullopt for zero rows
  std::vector<TopicRun> runs;
  std::size_t unlabeled = 0;
};

std::vector<TopicRun> collapse_runs(std::span<const std::optional<int>> labels);
LabeledTrajectory label_trajectory(const KnnModel& model, const Matrix& trajectory);

}  // namespace toxtraj::assign
