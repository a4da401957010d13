#include "toxtraj/coherence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <unordered_map>

#include "json.hpp"
#include "toxtraj/kdtree.hpp"
#include "toxtraj/parallel.hpp"
#include "toxtraj/rng.hpp"
#include "toxtraj/stats.hpp"

namespace toxtraj::coherence {

using nlohmann::json;
namespace fs = std::filesystem;

double reference_margin(const Matrix& in_points, const Matrix& out_points) {
  if (in_points.rows == 0 || out_points.rows == 0) throw InvalidArgument("coherence: empty sample set");
  if (in_points.cols != out_points.cols) throw InvalidArgument("coherence: sample dimensions differ");
  double inter = 0.0;
  for (std::size_t i = 0; i < in_points.rows; ++i)
    for (std::size_t j = 0; j < out_points.rows; ++j)
      inter += std::sqrt(squared_distance(in_points.row(i), out_points.row(j)));
  inter /= static_cast<double>(in_points.rows * out_points.rows);
  double intra = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < in_points.rows; ++i)
    for (std::size_t j = i + 1; j < in_points.rows; ++j) {
      intra += std::sqrt(squared_distance(in_points.row(i), in_points.row(j)));
      ++pairs;
    }
  if (pairs > 0) intra /= static_cast<double>(pairs);
  return (inter - intra) / (inter + 1e-12);
}

int reference_coherence_score(const Matrix& in_points, const Matrix& out_points) {
  const double m = reference_margin(in_points, out_points);
  if (m < 0.0) return 1;
  if (m < 0.1) return 2;
  if (m < 0.25) return 3;
  if (m < 0.45) return 4;
  return 5;
}

std::vector<int> ReferenceScorer::score(std::span<const CoherenceSample> samples) {
  std::vector<int> out(samples.size());
  parallel_for(samples.size(), workers_, [&](std::size_t i) {
    out[i] = reference_coherence_score(hdbscan::select_rows(*points_, samples[i].in_rows),
                                       hdbscan::select_rows(*points_, samples[i].out_rows));
  });
  return out;
}

ConstantScorer::ConstantScorer(int value) : value_(value) {
  if (value < 1 || value > 5) throw InvalidArgument("constant scorer: value must lie in 1..5");
}

std::vector<int> ConstantScorer::score(std::span<const CoherenceSample> samples) {
  return std::vector<int>(samples.size(), value_);
}

// clang-format off
const std::string_view kCoherencePrompt =
R"(Task Description:
You are a computational social scientist evaluating the coherence of a specific topic ("Topic A") ...

Evaluation Process:
1. Examine two sets of tweets:
   - In-topic examples: 30 randomly selected tweets classified as belonging to Topic A.
     {in_topic_examples}
   - Out-topic examples: 30 randomly selected tweets classified as NOT belonging to Topic A.
     {out_topic_examples}

2. Rate the coherence of Topic A on a 5-point Likert scale:
   - 5: Highly coherent.
   - 4: Moderately coherent.
   - 3: Neutral.
   - 2: Somewhat incoherent.
   - 1: Highly incoherent.

Note:
Relevance to U.S. immigration alone does not imply coherence. Evaluate distinctness of subtopics.

Output Format:
Coherence: {{coherence rate}})";
// clang-format on

ExternalScorer::ExternalScorer(std::vector<std::string> row_texts, fs::path requests, fs::path responses)
    : texts_(std::move(row_texts)), requests_(std::move(requests)), responses_(std::move(responses)) {}

namespace {

std::vector<std::string> gather_texts(std::span<const std::size_t> rows, std::span<const std::string> texts) {
  std::vector<std::string> out;
  out.reserve(rows.size());
  for (auto r : rows) {
    if (r >= texts.size()) throw InvalidArgument("external scorer: row has no text");
    out.push_back(texts[r]);
  }
  return out;
}

std::string fill_prompt(const std::vector<std::string>& in, const std::vector<std::string>& out) {
  auto block = [](const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += "\n     ";
      s += v[i];
    }
    return s;
  };
  std::string prompt(kCoherencePrompt);
  const std::string in_key = "{in_topic_examples}", out_key = "{out_topic_examples}";
  prompt.replace(prompt.find(in_key), in_key.size(), block(in));
  prompt.replace(prompt.find(out_key), out_key.size(), block(out));
  return prompt;
}

}  // namespace

std::string coherence_task_id(const CoherenceSample& sample, std::span<const std::string> row_texts) {
  std::string key = std::to_string(sample.node_id) + '\x1f' + std::to_string(sample.rep);
  for (const auto& t : gather_texts(sample.in_rows, row_texts)) key += '\x1e' + t;
  key += '\x1d';
  for (const auto& t : gather_texts(sample.out_rows, row_texts)) key += '\x1e' + t;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(key)));
  return buf;
}

std::vector<int> ExternalScorer::score(std::span<const CoherenceSample> samples) {
  std::vector<std::string> ids;
  ids.reserve(samples.size());
  {
    std::ofstream req(requests_);
    if (!req) throw FormatError("cannot write " + requests_.string());
    for (const auto& s : samples) {
      const auto in = gather_texts(s.in_rows, texts_);
      const auto out = gather_texts(s.out_rows, texts_);
      ids.push_back(coherence_task_id(s, texts_));
      req << json{{"task_id", ids.back()}, {"node_id", s.node_id}, {"rep", s.rep}, {"in_texts", in},
                  {"out_texts", out},      {"prompt", fill_prompt(in, out)}}
                 .dump()
          << '\n';
    }
    if (!req) throw FormatError("write failed: " + requests_.string());
  }
  if (!fs::exists(responses_))
    throw AwaitingResponses("coherence requests written to " + requests_.string() + "; awaiting responses in " +
                            responses_.string());
  std::ifstream in(responses_);
  if (!in) throw FormatError("cannot open " + responses_.string());
  std::unordered_map<std::string, int> answers;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = responses_.string() + ":" + std::to_string(lineno) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(where + e.what());
    }
    if (!j.contains("task_id") || !j["task_id"].is_string() || !j.contains("coherence") ||
        !j["coherence"].is_number_integer())
      throw FormatError(where + "expected {\"task_id\": string, \"coherence\": integer}");
    const int c = j["coherence"].get<int>();
    if (c < 1 || c > 5) throw FormatError(where + "coherence must lie in 1..5");
    answers[j["task_id"].get<std::string>()] = c;
  }
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& id : ids) {
    const auto it = answers.find(id);
    if (it == answers.end()) throw FormatError(responses_.string() + ": no response for task " + id);
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

// Sorted sample of k rows from [0, n_points) \ members (members ascending).
std::vector<std::size_t> sample_complement(Rng& rng, std::span<const std::size_t> members, std::size_t n_points,
                                           std::size_t k) {
  const std::size_t c = n_points - members.size();
  const auto idx = sample_without_replacement(rng, c, k);
  std::vector<std::size_t> out;
  out.reserve(k);
  std::size_t j = 0;
  for (std::size_t i : idx) {
    std::size_t v = i + j;
    while (j < members.size() && members[j] <= v) {
      ++j;
      v = i + j;
    }
    out.push_back(v);
  }
  return out;
}

bool testable(std::size_t members, std::size_t n_points, const SamplingConfig& c) {
  return members >= c.n_in && n_points - members >= c.n_out && members > 0;
}

}  // namespace

std::vector<CoherenceSample> coherence_samples(int node_id, std::span<const std::size_t> member_rows,
                                               std::size_t n_points, const SamplingConfig& config) {
  if (config.reps == 0 || config.n_in == 0 || config.n_out == 0)
    throw InvalidArgument("coherence: reps and sample sizes must be positive");
  if (member_rows.size() < config.n_in)
    throw InvalidArgument("coherence: node " + std::to_string(node_id) + " has fewer than n_in members");
  if (member_rows.size() > n_points || n_points - member_rows.size() < config.n_out)
    throw InvalidArgument("coherence: complement of node " + std::to_string(node_id) + " has fewer than n_out rows");
  if (!std::is_sorted(member_rows.begin(), member_rows.end()) ||
      std::adjacent_find(member_rows.begin(), member_rows.end()) != member_rows.end())
    throw InvalidArgument("coherence: member rows must be strictly ascending");
  std::vector<CoherenceSample> out(config.reps);
  for (std::size_t rep = 0; rep < config.reps; ++rep) {
    Rng rng = Rng::stream(config.seed, fnv1a("coherence"), static_cast<std::uint64_t>(node_id), rep);
    auto& s = out[rep];
    s.node_id = node_id;
    s.rep = static_cast<int>(rep);
    for (auto i : sample_without_replacement(rng, member_rows.size(), config.n_in)) s.in_rows.push_back(member_rows[i]);
    s.out_rows = sample_complement(rng, member_rows, n_points, config.n_out);
  }
  return out;
}

std::vector<int> coherence_distribution(int node_id, std::span<const std::size_t> member_rows, std::size_t n_points,
                                        CoherenceScorer& scorer, const SamplingConfig& config) {
  const auto samples = coherence_samples(node_id, member_rows, n_points, config);
  auto scores = scorer.score(samples);
  if (scores.size() != samples.size()) throw Error("coherence: scorer returned the wrong number of scores");
  for (int s : scores)
    if (s < 1 || s > 5) throw Error("coherence: scorer returned a score outside 1..5");
  return scores;
}

GateResult test_subcluster(std::span<const int> child_scores, std::span<const int> parent_scores, double alpha) {
  if (child_scores.empty() || parent_scores.empty()) throw InvalidArgument("test_subcluster: empty score sequence");
  const std::vector<double> c(child_scores.begin(), child_scores.end());
  const std::vector<double> p(parent_scores.begin(), parent_scores.end());
  const auto u = stats::mann_whitney_u(c, p, stats::Alternative::greater);
  return {stats::is_significant(u.p_value, alpha) ? Decision::keep : Decision::merge, u.p_value};
}

std::string_view to_string(NodeStatus s) {
  switch (s) {
    case NodeStatus::kept: return "kept";
    case NodeStatus::merged: return "merged";
    case NodeStatus::discarded: return "discarded";
  }
  return "kept";
}

TopicTree from_cluster_tree(const hdbscan::ClusterTree& tree) {
  TopicTree t;
  t.n_points = tree.n_points;
  t.params = tree.params;
  for (const auto& n : tree.nodes) {
    TopicNode tn;
    tn.node_id = n.node_id;
    tn.level = n.level;
    tn.parent = n.parent;
    tn.children = n.children;
    tn.member_rows = n.member_rows;
    tn.params_used = n.params_used;
    t.nodes.push_back(std::move(tn));
  }
  return t;
}

TopicTree merge_pass(TopicTree tree, CoherenceScorer& scorer, const MergeConfig& config) {
  tree.config = config;
  tree.scorer = scorer.name();
  const auto& sc = config.sampling;

  // Score every kept, testable node in one batch.
  std::vector<CoherenceSample> batch;
  std::vector<int> scored;
  for (const auto& n : tree.nodes) {
    if (n.status != NodeStatus::kept || !testable(n.member_rows.size(), tree.n_points, sc)) continue;
    auto s = coherence_samples(n.node_id, n.member_rows, tree.n_points, sc);
    batch.insert(batch.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    scored.push_back(n.node_id);
  }
  const auto scores = scorer.score(batch);
  if (scores.size() != batch.size()) throw Error("coherence: scorer returned the wrong number of scores");
  for (int s : scores)
    if (s < 1 || s > 5) throw Error("coherence: scorer returned a score outside 1..5");
  for (auto& n : tree.nodes)
    if (n.status == NodeStatus::kept) n.coherence_scores.clear();
  for (std::size_t i = 0; i < scored.size(); ++i) {
    auto& n = tree.nodes[static_cast<std::size_t>(scored[i])];
    n.coherence_scores.assign(scores.begin() + static_cast<std::ptrdiff_t>(i * sc.reps),
                              scores.begin() + static_cast<std::ptrdiff_t>((i + 1) * sc.reps));
    n.untestable = false;
  }

  // Gate each kept non-root node against its parent.
  std::vector<bool> pass(tree.nodes.size(), true);
  for (auto& n : tree.nodes) {
    if (n.status != NodeStatus::kept || !n.parent) continue;
    const auto& parent = tree.nodes[static_cast<std::size_t>(*n.parent)];
    if (n.coherence_scores.empty() || parent.coherence_scores.empty()) {
      n.untestable = n.coherence_scores.empty();
      n.p_value.reset();
      pass[static_cast<std::size_t>(n.node_id)] = false;
      continue;
    }
    const auto g = test_subcluster(n.coherence_scores, parent.coherence_scores, config.alpha);
    n.p_value = g.p_value;
    pass[static_cast<std::size_t>(n.node_id)] = g.decision == Decision::keep;
  }
  // Parents precede children, so one forward sweep propagates.
  for (auto& n : tree.nodes) {
    if (n.status != NodeStatus::kept || !n.parent) continue;
    const auto& parent = tree.nodes[static_cast<std::size_t>(*n.parent)];
    if (parent.status != NodeStatus::kept) n.status = NodeStatus::discarded;
    else if (!pass[static_cast<std::size_t>(n.node_id)]) n.status = NodeStatus::merged;
  }
  return tree;
}

TopicTree merge_pass(const hdbscan::ClusterTree& tree, CoherenceScorer& scorer, const MergeConfig& config) {
  return merge_pass(from_cluster_tree(tree), scorer, config);
}

std::map<int, std::size_t> level_counts(const TopicTree& tree) {
  std::map<int, std::size_t> out;
  for (const auto& n : tree.nodes)
    if (n.status == NodeStatus::kept) ++out[n.level];
  return out;
}

std::size_t outlier_count(const TopicTree& tree) {
  std::vector<bool> covered(tree.n_points, false);
  for (const auto& n : tree.nodes)
    if (n.level == 1 && n.status == NodeStatus::kept)
      for (auto r : n.member_rows) covered[r] = true;
  return static_cast<std::size_t>(std::count(covered.begin(), covered.end(), false));
}

std::vector<int> topic_labels(const TopicTree& tree, int level) {
  if (level < 1) throw InvalidArgument("topic_labels: level must be at least 1");
  std::vector<int> out(tree.n_points, -1);
  for (const auto& n : tree.nodes) {
    if (n.status != NodeStatus::kept || n.level > level) continue;
    const bool kept_child = std::any_of(n.children.begin(), n.children.end(), [&](int c) {
      return tree.nodes[static_cast<std::size_t>(c)].status == NodeStatus::kept;
    });
    if (n.level < level && kept_child) continue;
    for (auto r : n.member_rows) out[r] = n.node_id;
  }
  return out;
}

void annotate_toxicity(TopicTree& tree, std::span<const std::optional<double>> row_toxicity) {
  if (row_toxicity.size() != tree.n_points) throw InvalidArgument("annotate_toxicity: one value per row expected");
  for (auto& n : tree.nodes) {
    double sum = 0.0;
    std::size_t count = 0;
    for (auto r : n.member_rows)
      if (row_toxicity[r]) {
        sum += *row_toxicity[r];
        ++count;
      }
    if (count) n.mean_toxicity = sum / static_cast<double>(count);
    else n.mean_toxicity.reset();
  }
}

// ---------------------------------------------------------------------------

void write_topics(const fs::path& path, const TopicTree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes) {
    nodes.push_back({{"node_id", n.node_id},
                     {"level", n.level},
                     {"parent", n.parent ? json(*n.parent) : json(nullptr)},
                     {"children", n.children},
                     {"member_count", n.member_rows.size()},
                     {"member_rows", n.member_rows},
                     {"params", {{"min_cluster_size", n.params_used.min_cluster_size},
                                 {"min_samples", n.params_used.min_samples}}},
                     {"coherence_scores", n.coherence_scores},
                     {"status", to_string(n.status)},
                     {"p_value", n.p_value ? json(*n.p_value) : json(nullptr)},
                     {"untestable", n.untestable},
                     {"label", n.label ? json(*n.label) : json(nullptr)},
                     {"mean_toxicity", n.mean_toxicity ? json(*n.mean_toxicity) : json(nullptr)}});
  }
  json counts = json::object();
  for (const auto& [lvl, c] : level_counts(tree)) counts[std::to_string(lvl)] = c;
  const json doc = {{"n_points", tree.n_points},
                    {"params", {{"min_cluster_size", tree.params.min_cluster_size},
                                {"min_samples", tree.params.min_samples}}},
                    {"alpha", tree.config.alpha},
                    {"reps", tree.config.sampling.reps},
                    {"n_in", tree.config.sampling.n_in},
                    {"n_out", tree.config.sampling.n_out},
                    {"seed", tree.config.sampling.seed},
                    {"scorer", tree.scorer},
                    {"level_counts", counts},
                    {"outliers", outlier_count(tree)},
                    {"nodes", nodes}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

TopicTree read_topics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  TopicTree t;
  try {
    const json doc = json::parse(in);
    t.n_points = doc.at("n_points").get<std::size_t>();
    t.params.min_cluster_size = doc.at("params").at("min_cluster_size").get<std::size_t>();
    t.params.min_samples = doc.at("params").at("min_samples").get<std::size_t>();
    t.config.alpha = doc.at("alpha").get<double>();
    t.config.sampling.reps = doc.at("reps").get<std::size_t>();
    t.config.sampling.n_in = doc.at("n_in").get<std::size_t>();
    t.config.sampling.n_out = doc.at("n_out").get<std::size_t>();
    t.config.sampling.seed = doc.at("seed").get<std::uint64_t>();
    t.scorer = doc.at("scorer").get<std::string>();
    for (const auto& j : doc.at("nodes")) {
      TopicNode n;
      n.node_id = j.at("node_id").get<int>();
      n.level = j.at("level").get<int>();
      if (!j.at("parent").is_null()) n.parent = j.at("parent").get<int>();
      n.children = j.at("children").get<std::vector<int>>();
      n.member_rows = j.at("member_rows").get<std::vector<std::size_t>>();
      n.params_used.min_cluster_size = j.at("params").at("min_cluster_size").get<std::size_t>();
      n.params_used.min_samples = j.at("params").at("min_samples").get<std::size_t>();
      n.coherence_scores = j.at("coherence_scores").get<std::vector<int>>();
      const auto status = j.at("status").get<std::string>();
      if (status == "kept") n.status = NodeStatus::kept;
      else if (status == "merged") n.status = NodeStatus::merged;
      else if (status == "discarded") n.status = NodeStatus::discarded;
      else throw FormatError("unknown node status " + status);
      if (!j.at("p_value").is_null()) n.p_value = j.at("p_value").get<double>();
      n.untestable = j.at("untestable").get<bool>();
      if (!j.at("label").is_null()) n.label = j.at("label").get<std::string>();
      if (!j.at("mean_toxicity").is_null()) n.mean_toxicity = j.at("mean_toxicity").get<double>();
      t.nodes.push_back(std::move(n));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    const auto& n = t.nodes[i];
    if (n.node_id != static_cast<int>(i)) throw FormatError(path.string() + ": node ids must be 0..N-1 in order");
    if (n.parent && (*n.parent < 0 || *n.parent >= n.node_id)) throw FormatError(path.string() + ": bad parent");
    for (auto r : n.member_rows)
      if (r >= t.n_points) throw FormatError(path.string() + ": member row out of range");
  }
  return t;
}

}  // namespace toxtraj::coherence
