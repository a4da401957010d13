#include "toxtraj/assign.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "toxtraj/error.hpp"
#include "toxtraj/parallel.hpp"
#include "toxtraj/rng.hpp"

namespace toxtraj::assign {

namespace {

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

KnnModel fit_knn(const Matrix& points, std::span<const int> labels, std::size_t k) {
  if (points.rows != labels.size()) throw InvalidArgument("fit_knn: one label per point expected");
  if (k == 0) throw InvalidArgument("fit_knn: k must be positive");
  if (points.rows < k) throw InvalidArgument("fit_knn: fewer training points than k");
  KnnModel m;
  m.k = k;
  m.labels.assign(labels.begin(), labels.end());
  m.points = Matrix(points.rows, points.cols);
  for (std::size_t i = 0; i < points.rows; ++i) {
    if (labels[i] < 0) throw InvalidArgument("fit_knn: training labels must be topic ids (>= 0)");
    const double n = norm(points.row(i));
    if (!(n > 0.0) || !std::isfinite(n)) throw InvalidArgument("fit_knn: zero-norm training point");
    for (std::size_t j = 0; j < points.cols; ++j) m.points(i, j) = points(i, j) / n;
  }
  return m;
}

std::vector<Neighbor> nearest_neighbors(const KnnModel& model, std::span<const double> query) {
  if (query.size() != model.points.cols) throw InvalidArgument("predict: query dimension mismatch");
  const double qn = norm(query);
  if (!(qn > 0.0)) throw InvalidArgument("predict: zero-norm query");
  std::vector<double> q(query.begin(), query.end());
  for (auto& v : q) v /= qn;
  auto better = [](const Neighbor& x, const Neighbor& y) {
    return x.similarity > y.similarity || (x.similarity == y.similarity && x.index < y.index);
  };
  // Bounded heap holding the k best; the front is the worst kept.
  std::vector<Neighbor> heap;
  heap.reserve(model.k + 1);
  for (std::size_t i = 0; i < model.points.rows; ++i) {
    const auto r = model.points.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < q.size(); ++j) s += q[j] * r[j];
    const Neighbor cand{i, s};
    if (heap.size() < model.k) {
      heap.push_back(cand);
      std::push_heap(heap.begin(), heap.end(), better);
    } else if (better(cand, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), better);
      heap.back() = cand;
      std::push_heap(heap.begin(), heap.end(), better);
    }
  }
  std::sort(heap.begin(), heap.end(), better);
  return heap;
}

int predict_topic(const KnnModel& model, std::span<const double> query) {
  const auto nn = nearest_neighbors(model, query);
  std::map<int, std::pair<std::size_t, double>> votes;
  for (const auto& n : nn) {
    auto& v = votes[model.labels[n.index]];
    ++v.first;
    v.second += n.similarity;
  }
  int best = votes.begin()->first;
  auto best_v = votes.begin()->second;
  for (const auto& [label, v] : votes) {
    if (v.first > best_v.first || (v.first == best_v.first && v.second > best_v.second)) {
      best = label;
      best_v = v;
    }
  }
  return best;
}

std::vector<int> predict_all(const KnnModel& model, const Matrix& queries, unsigned workers) {
  std::vector<int> out(queries.rows);
  parallel_for(queries.rows, workers, [&](std::size_t i) { out[i] = predict_topic(model, queries.row(i)); });
  return out;
}

F1Scores evaluate_f1(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw InvalidArgument("evaluate_f1: truth and predictions differ in length");
  if (truth.empty()) throw InvalidArgument("evaluate_f1: empty holdout");
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(predicted.begin(), predicted.end());
  std::map<int, std::size_t> tp, fp, fn;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == predicted[i]) {
      ++tp[truth[i]];
      ++correct;
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  double macro = 0.0;
  for (int c : classes) {
    const double t = static_cast<double>(tp[c]);
    const double p_den = t + static_cast<double>(fp[c]);
    const double r_den = t + static_cast<double>(fn[c]);
    const double precision = p_den > 0.0 ? t / p_den : 0.0;
    const double recall = r_den > 0.0 ? t / r_den : 0.0;
    macro += precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  F1Scores s;
  s.n = truth.size();
  s.macro_f1 = 100.0 * macro / static_cast<double>(classes.size());
  s.micro_f1 = 100.0 * static_cast<double>(correct) / static_cast<double>(truth.size());
  return s;
}

F1Scores evaluate_f1(const KnnModel& model, const Matrix& holdout, std::span<const int> truth, unsigned workers) {
  if (holdout.rows == 0) throw InvalidArgument("evaluate_f1: empty holdout");
  const auto pred = predict_all(model, holdout, workers);
  return evaluate_f1(truth, pred);
}

Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw InvalidArgument("stratified_split: fraction must lie in [0, 1)");
  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  Split s;
  for (auto& [label, idx] : by_label) {
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(idx.size()) + 1e-9));
    Rng rng = Rng::stream(seed, fnv1a("split"), static_cast<std::uint64_t>(static_cast<std::int64_t>(label)));
    const auto pick = sample_without_replacement(rng, idx.size(), n_test);
    std::vector<bool> is_test(idx.size(), false);
    for (auto p : pick) is_test[p] = true;
    for (std::size_t i = 0; i < idx.size(); ++i) (is_test[i] ? s.test : s.train).push_back(idx[i]);
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<TopicRun> collapse_runs(std::span<const std::optional<int>> labels) {
  std::vector<TopicRun> runs;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i].value_or(-1);
    if (!runs.empty() && runs.back().topic == t && runs.back().end + 1 == i) runs.back().end = i;
    else runs.push_back({t, i, i});
  }
  return runs;
}

LabeledTrajectory label_trajectory(const KnnModel& model, const Matrix& trajectory) {
  LabeledTrajectory out;
  out.labels.resize(trajectory.rows);
  for (std::size_t i = 0; i < trajectory.rows; ++i) {
    if (norm(trajectory.row(i)) > 0.0) out.labels[i] = predict_topic(model, trajectory.row(i));
    else ++out.unlabeled;
  }
  out.runs = collapse_runs(out.labels);
  return out;
}

}  // namespace toxtraj::assign
