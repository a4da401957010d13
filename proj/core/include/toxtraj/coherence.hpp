#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toxtraj/error.hpp"
#include "toxtraj/hdbscan.hpp"
#include "toxtraj/matrix.hpp"

namespace toxtraj::coherence {

/// One scoring task: rows inside a node and rows drawn from outside it.
struct CoherenceSample {
  int node_id = 0;
  int rep = 0;
  std::vector<std::size_t> in_rows;
  std::vector<std::size_t> out_rows;
};

class CoherenceScorer {
 public:
  virtual ~CoherenceScorer() = default;
  virtual std::string name() const = 0;
  /// One score in 1..5 per sample; a pure function of each sample's rows.
  virtual std::vector<int> score(std::span<const CoherenceSample> samples) = 0;
};

/// Geometric stand-in for a human rater. With inter = mean in/out distance
/// and intra = mean distance over distinct in/in pairs, the margin
/// (inter - intra) / (inter + 1e-12) maps to 1..5 at 0, 0.1, 0.25, 0.45.
int reference_coherence_score(const Matrix& in_points, const Matrix& out_points);
double reference_margin(const Matrix& in_points, const Matrix& out_points);

class ReferenceScorer final : public CoherenceScorer {
 public:
  explicit ReferenceScorer(const Matrix& points, unsigned workers = 1) : points_(&points), workers_(workers) {}
  std::string name() const override { return "reference"; }
  std::vector<int> score(std::span<const CoherenceSample> samples) override;

 private:
  const Matrix* points_;
  unsigned workers_;
};

class ConstantScorer final : public CoherenceScorer {
 public:
  explicit ConstantScorer(int value);
  std::string name() const override { return "constant"; }
  std::vector<int> score(std::span<const CoherenceSample> samples) override;

 private:
  int value_;
};

/// Rating prompt for an external coherence rater. The two placeholders are
/// replaced by the sampled texts, one per line.
extern const std::string_view kCoherencePrompt;

/// Raised when the external exchange has written its requests and no
/// matching responses exist yet.
class AwaitingResponses : public Error {
 public:
  using Error::Error;
};

/// File-exchange scorer. score() writes every request to `requests`; if
/// `responses` exists it must answer every task_id, otherwise
/// AwaitingResponses is thrown. task_id hashes the node, rep, and texts, so
/// responses for different samples are rejected.
class ExternalScorer final : public CoherenceScorer {
 public:
  ExternalScorer(std::vector<std::string> row_texts, std::filesystem::path requests, std::filesystem::path responses);
  std::string name() const override { return "external"; }
  std::vector<int> score(std::span<const CoherenceSample> samples) override;

 private:
  std::vector<std::string> texts_;
  std::filesystem::path requests_, responses_;
};

std::string coherence_task_id(const CoherenceSample& sample, std::span<const std::string> row_texts);

struct SamplingConfig {
  std::size_t reps = 30;
  std::size_t n_in = 30;
  std::size_t n_out = 30;
  std::uint64_t seed = 0;
  bool operator==(const SamplingConfig&) const = default;
};

/// Samples for one node: per rep, n_in member rows and n_out rows from the
/// complement of the node in [0, n_points), each uniformly without
/// replacement from the stream (seed, node_id, rep).
std::vector<CoherenceSample> coherence_samples(int node_id, std::span<const std::size_t> member_rows,
                                               std::size_t n_points, const SamplingConfig& config);

std::vector<int> coherence_distribution(int node_id, std::span<const std::size_t> member_rows, std::size_t n_points,
                                        CoherenceScorer& scorer, const SamplingConfig& config);

enum class Decision { keep, merge };

struct GateResult {
  Decision decision = Decision::merge;
  double p_value = 1.0;
};

/// Keep iff the one-sided Mann-Whitney test (child > parent) gives p < alpha.
GateResult test_subcluster(std::span<const int> child_scores, std::span<const int> parent_scores,
                           double alpha = 0.05);

enum class NodeStatus { kept, merged, discarded };
std::string_view to_string(NodeStatus s);

struct TopicNode {
  int node_id = 0;
  int level = 1;
  std::optional<int> parent;
  std::vector<int> children;
  std::vector<std::size_t> member_rows;
  hdbscan::Params params_used;
  std::vector<int> coherence_scores;
  NodeStatus status = NodeStatus::kept;
  std::optional<double> p_value;  ///< merge-gate p for tested nodes
  bool untestable = false;        ///< auto-merged: too small to sample
  std::optional<std::string> label;
  std::optional<double> mean_toxicity;

  bool operator==(const TopicNode&) const = default;
};

struct MergeConfig {
  double alpha = 0.05;
  SamplingConfig sampling;
  bool operator==(const MergeConfig&) const = default;
};

struct TopicTree {
  std::size_t n_points = 0;
  hdbscan::Params params;
  MergeConfig config;
  std::string scorer;
  std::vector<TopicNode> nodes;  ///< node_id == index

  const TopicNode& node(int id) const { return nodes.at(static_cast<std::size_t>(id)); }
  bool operator==(const TopicTree&) const = default;
};

TopicTree from_cluster_tree(const hdbscan::ClusterTree& tree);

/// Coherence-gated merging. Every currently kept node is scored; each kept
/// node below level 1 is tested against its parent. A node survives iff it
/// and every tested ancestor pass; failing nodes become merged (their rows
/// revert to the parent) and their kept descendants discarded. Runs on the
/// nodes still kept, so applying it to its own output changes nothing.
TopicTree merge_pass(TopicTree tree, CoherenceScorer& scorer, const MergeConfig& config);
TopicTree merge_pass(const hdbscan::ClusterTree& tree, CoherenceScorer& scorer, const MergeConfig& config);

/// Surviving node count per level.
std::map<int, std::size_t> level_counts(const TopicTree& tree);
/// Rows in no surviving level-1 node.
std::size_t outlier_count(const TopicTree& tree);

/// Topics used for classification at a level: kept nodes of that level plus
/// kept leaves above it. Returns a topic id (node id) per row or -1.
std::vector<int> topic_labels(const TopicTree& tree, int level = 2);

/// Fills mean_toxicity from per-row toxicity (rows without a value skipped).
void annotate_toxicity(TopicTree& tree, std::span<const std::optional<double>> row_toxicity);

void write_topics(const std::filesystem::path& path, const TopicTree& tree);
TopicTree read_topics(const std::filesystem::path& path);

}  // namespace toxtraj::coherence
