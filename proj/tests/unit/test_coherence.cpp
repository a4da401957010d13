#include <gmock/gmock.h>
#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "temp_dir.hpp"
#include "toxtraj/coherence.hpp"
#include "toxtraj/error.hpp"

using namespace toxtraj;
using namespace toxtraj::coherence;
using testing_support::TempDir;

namespace {

// Scores depend only on the node id.
class ScriptedScorer final : public CoherenceScorer {
 public:
  explicit ScriptedScorer(std::map<int, int> base) : base_(std::move(base)) {}
  std::string name() const override { return "scripted"; }
  std::vector<int> score(std::span<const CoherenceSample> samples) override {
    ++calls;
    std::vector<int> out;
    for (const auto& s : samples) {
      const int b = base_.at(s.node_id);
      out.push_back(std::clamp(b + (s.rep % 3 == 0 ? -1 : 0) + (s.rep % 5 == 0 ? 1 : 0), 1, 5));
    }
    return out;
  }
  int calls = 0;

 private:
  std::map<int, int> base_;
};

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> v;
  for (auto i = lo; i < hi; ++i) v.push_back(i);
  return v;
}

// 400 rows: two level-1 nodes, each with two level-2 children, one level-3 node.
TopicTree small_tree() {
  TopicTree t;
  t.n_points = 400;
  auto add = [&](int id, int level, std::optional<int> parent, std::vector<std::size_t> rows) {
    TopicNode n;
    n.node_id = id;
    n.level = level;
    n.parent = parent;
    n.member_rows = std::move(rows);
    t.nodes.push_back(n);
    if (parent) t.nodes[static_cast<std::size_t>(*parent)].children.push_back(id);
  };
  add(0, 1, std::nullopt, range(0, 180));
  add(1, 2, 0, range(0, 80));
  add(2, 3, 1, range(0, 40));
  add(3, 3, 1, range(40, 80));
  add(4, 2, 0, range(90, 180));
  add(5, 1, std::nullopt, range(200, 380));
  add(6, 2, 5, range(200, 290));
  add(7, 2, 5, range(290, 380));
  return t;
}

}  // namespace

TEST(ReferenceScore, MarginThresholds) {
  Matrix tight(3, 1), far(3, 1);
  tight.values = {0.0, 0.1, 0.2};
  far.values = {10.0, 10.1, 10.2};
  EXPECT_GT(reference_margin(tight, far), 0.9);
  EXPECT_EQ(reference_coherence_score(tight, far), 5);
  Matrix same(3, 1);
  same.values = {0.05, 0.15, 0.1};
  EXPECT_LT(reference_margin(tight, same), 0.0);
  EXPECT_EQ(reference_coherence_score(tight, same), 1);
  EXPECT_THROW(reference_margin(Matrix(0, 1), far), InvalidArgument);
}

TEST(Sampling, DrawsDisjointSortedSamples) {
  const auto members = range(100, 160);
  SamplingConfig c;
  c.seed = 11;
  const auto samples = coherence_samples(4, members, 300, c);
  ASSERT_EQ(samples.size(), 30u);
  std::set<std::vector<std::size_t>> distinct;
  for (const auto& s : samples) {
    EXPECT_EQ(s.node_id, 4);
    ASSERT_EQ(s.in_rows.size(), 30u);
    ASSERT_EQ(s.out_rows.size(), 30u);
    EXPECT_TRUE(std::is_sorted(s.in_rows.begin(), s.in_rows.end()));
    EXPECT_TRUE(std::is_sorted(s.out_rows.begin(), s.out_rows.end()));
    for (auto r : s.in_rows) EXPECT_TRUE(r >= 100 && r < 160);
    for (auto r : s.out_rows) EXPECT_TRUE(r < 100 || (r >= 160 && r < 300));
    EXPECT_EQ(std::set<std::size_t>(s.out_rows.begin(), s.out_rows.end()).size(), 30u);
    distinct.insert(s.in_rows);
  }
  EXPECT_GT(distinct.size(), 25u);
  const auto again = coherence_samples(4, members, 300, c);
  for (std::size_t i = 0; i < samples.size(); ++i) EXPECT_EQ(again[i].out_rows, samples[i].out_rows);
  EXPECT_THROW(coherence_samples(4, range(0, 10), 300, c), InvalidArgument);
  EXPECT_THROW(coherence_samples(4, range(0, 280), 300, c), InvalidArgument);
}

TEST(Sampling, ComplementCoversEveryNonMember) {
  const std::vector<std::size_t> members{0, 2, 4, 6, 8};
  SamplingConfig c{400, 1, 5, 3};
  std::set<std::size_t> seen;
  for (const auto& s : coherence_samples(0, members, 10, c))
    for (auto r : s.out_rows) seen.insert(r);
  EXPECT_EQ(seen, (std::set<std::size_t>{1, 3, 5, 7, 9}));
}

TEST(Gate, OneSidedStrict) {
  const std::vector<int> hi(30, 5), lo(30, 2);
  const auto keep = test_subcluster(hi, lo);
  EXPECT_EQ(keep.decision, Decision::keep);
  EXPECT_LT(keep.p_value, 1e-6);
  EXPECT_EQ(test_subcluster(lo, hi).decision, Decision::merge);
  EXPECT_EQ(test_subcluster(lo, lo).decision, Decision::merge);
  const auto g = test_subcluster(hi, lo, keep.p_value);
  EXPECT_EQ(g.decision, Decision::merge);
}

TEST(MergePass, ConstantScorerMergesEverySubcluster) {
  ConstantScorer scorer(3);
  const auto out = merge_pass(small_tree(), scorer, {});
  for (const auto& n : out.nodes) {
    if (n.level == 1) EXPECT_EQ(n.status, NodeStatus::kept);
    else EXPECT_NE(n.status, NodeStatus::kept) << n.node_id;
  }
  EXPECT_EQ(level_counts(out), (std::map<int, std::size_t>{{1, 2}}));
  EXPECT_THROW(ConstantScorer(0), InvalidArgument);
}

TEST(MergePass, StatusesFollowTheGate) {
  // Node 1 beats its parent, node 4 ties it; node 2 beats node 1, node 3 does not.
  ScriptedScorer scorer({{0, 2}, {1, 4}, {2, 5}, {3, 3}, {4, 2}, {5, 4}, {6, 2}, {7, 5}});
  const auto out = merge_pass(small_tree(), scorer, {});
  EXPECT_EQ(scorer.calls, 1);
  auto status = [&](int id) { return out.node(id).status; };
  EXPECT_EQ(status(0), NodeStatus::kept);
  EXPECT_EQ(status(1), NodeStatus::kept);
  EXPECT_EQ(status(2), NodeStatus::kept);
  EXPECT_EQ(status(3), NodeStatus::merged);
  EXPECT_EQ(status(4), NodeStatus::merged);
  EXPECT_EQ(status(6), NodeStatus::merged);
  EXPECT_EQ(status(7), NodeStatus::kept);
  for (const auto& n : out.nodes) {
    EXPECT_EQ(n.coherence_scores.size(), 30u);
    if (n.parent) {
      ASSERT_TRUE(n.p_value);
    }
  }
  EXPECT_EQ(level_counts(out), (std::map<int, std::size_t>{{1, 2}, {2, 2}, {3, 1}}));
}

TEST(MergePass, DescendantsOfMergedAreDiscarded) {
  ScriptedScorer scorer({{0, 4}, {1, 2}, {2, 5}, {3, 5}, {4, 2}, {5, 4}, {6, 2}, {7, 2}});
  const auto out = merge_pass(small_tree(), scorer, {});
  EXPECT_EQ(out.node(1).status, NodeStatus::merged);
  EXPECT_EQ(out.node(2).status, NodeStatus::discarded);
  EXPECT_EQ(out.node(3).status, NodeStatus::discarded);
}

TEST(MergePass, UntestableNodesMerge) {
  auto t = small_tree();
  t.nodes[2].member_rows = range(0, 10);
  ScriptedScorer scorer({{0, 2}, {1, 4}, {2, 5}, {3, 5}, {4, 2}, {5, 4}, {6, 2}, {7, 5}});
  const auto out = merge_pass(t, scorer, {});
  EXPECT_TRUE(out.node(2).untestable);
  EXPECT_EQ(out.node(2).status, NodeStatus::merged);
  EXPECT_EQ(out.node(3).status, NodeStatus::kept);
}

TEST(MergePass, Idempotent) {
  ScriptedScorer scorer({{0, 2}, {1, 4}, {2, 5}, {3, 3}, {4, 2}, {5, 4}, {6, 2}, {7, 5}});
  const auto once = merge_pass(small_tree(), scorer, {});
  EXPECT_EQ(merge_pass(once, scorer, {}), once);
}

TEST(TopicLabels, KeptLevelTwoAndLeavesAbove) {
  ScriptedScorer scorer({{0, 2}, {1, 4}, {2, 5}, {3, 3}, {4, 2}, {5, 2}, {6, 1}, {7, 1}});
  const auto out = merge_pass(small_tree(), scorer, {});
  const auto labels = topic_labels(out, 2);
  EXPECT_EQ(labels[0], 1);
  EXPECT_EQ(labels[85], -1);   // in node 0 only via the merged child 4
  EXPECT_EQ(labels[250], 5);   // node 5 has no kept children
  EXPECT_EQ(labels[390], -1);
  const auto l3 = topic_labels(out, 3);
  EXPECT_EQ(l3[10], 2);
  EXPECT_EQ(l3[50], -1);
  EXPECT_EQ(outlier_count(out), 400u - 360u);
}

TEST(Topics, ToxicityAndRoundTrip) {
  TempDir dir("topics");
  ScriptedScorer scorer({{0, 2}, {1, 4}, {2, 5}, {3, 3}, {4, 2}, {5, 4}, {6, 2}, {7, 5}});
  auto out = merge_pass(small_tree(), scorer, {});
  std::vector<std::optional<double>> tox(400);
  for (std::size_t i = 0; i < 400; ++i)
    if (i % 2 == 0) tox[i] = static_cast<double>(i % 100);
  annotate_toxicity(out, tox);
  ASSERT_TRUE(out.node(2).mean_toxicity);
  EXPECT_DOUBLE_EQ(*out.node(2).mean_toxicity, 19.0);
  write_topics(dir / "t.json", out);
  EXPECT_EQ(read_topics(dir / "t.json"), out);
}

TEST(ExternalScorer, FileExchange) {
  TempDir dir("ext");
  std::vector<std::string> texts;
  for (int i = 0; i < 400; ++i) texts.push_back("post " + std::to_string(i));
  ExternalScorer scorer(texts, dir / "req.jsonl", dir / "resp.jsonl");
  const auto tree = small_tree();
  EXPECT_THROW(merge_pass(tree, scorer, {}), AwaitingResponses);

  std::ifstream req(dir / "req.jsonl");
  std::ofstream resp(dir / "resp.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(req, line)) {
    const auto j = nlohmann::json::parse(line);
    const int node = j.at("node_id").get<int>();
    const std::string prompt = j.at("prompt").get<std::string>();
    EXPECT_THAT(prompt, ::testing::StartsWith("Task Description:"));
    EXPECT_EQ(prompt.find("{in_topic_examples}"), std::string::npos);
    EXPECT_EQ(prompt.find("{out_topic_examples}"), std::string::npos);
    EXPECT_THAT(prompt, ::testing::HasSubstr("Coherence: {{coherence rate}}"));
    EXPECT_EQ(j.at("in_texts").size(), 30u);
    resp << nlohmann::json{{"task_id", j.at("task_id")}, {"coherence", node == 1 ? 5 : 2}}.dump() << '\n';
    ++n;
  }
  resp.close();
  EXPECT_EQ(n, 8u * 30u);
  const auto out = merge_pass(tree, scorer, {});
  EXPECT_EQ(out.scorer, "external");
  EXPECT_EQ(out.node(1).status, NodeStatus::kept);
  EXPECT_EQ(out.node(4).status, NodeStatus::merged);

  std::ofstream(dir / "resp.jsonl") << R"({"task_id":"x","coherence":3})" << '\n';
  EXPECT_THROW(merge_pass(tree, scorer, {}), FormatError);
}

TEST(Prompt, TemplateHasPlaceholders) {
  const std::string p(kCoherencePrompt);
  EXPECT_THAT(p, ::testing::HasSubstr("{in_topic_examples}"));
  EXPECT_THAT(p, ::testing::HasSubstr("{out_topic_examples}"));
  EXPECT_THAT(p, ::testing::StartsWith("Task Description:"));
}
