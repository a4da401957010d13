#include "toxtraj/pipeline.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "toxtraj/assign.hpp"
#include "toxtraj/coherence.hpp"
#include "toxtraj/hdbscan.hpp"
#include "toxtraj/permanova.hpp"
#include "toxtraj/reduce.hpp"
#include "toxtraj/rng.hpp"
#include "toxtraj/trajectory.hpp"

namespace toxtraj {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
  if (!out) throw FormatError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void require_file(const fs::path& path, std::string_view what) {
  if (!fs::exists(path)) throw InvalidArgument(std::string(what) + " not found: " + path.string());
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, std::string_view where) {
  if (!j.is_object()) throw FormatError("config: " + std::string(where) + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.contains(k)) throw FormatError("config: unknown key " + std::string(where) + "." + k);
}

template <class T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void take_path(const json& j, const char* key, fs::path& dst, const fs::path& base) {
  if (!j.contains(key)) return;
  fs::path p = j.at(key).get<std::string>();
  dst = p.is_absolute() || base.empty() ? p : base / p;
}

void take_path(const json& j, const char* key, std::optional<fs::path>& dst, const fs::path& base) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  fs::path p;
  take_path(j, key, p, base);
  dst = p;
}

StudyWindow window_of(const PipelineConfig& c) {
  StudyWindowConfig w;
  if (c.t0) w.t0 = parse_iso8601(*c.t0);
  if (c.t_end) w.t_end = parse_iso8601(*c.t_end);
  w.n_daily_grid = c.n_daily_grid;
  w.week_len_days = c.week_len_days;
  return study_window(w);
}

}  // namespace

PipelineConfig parse_config(const std::string& text, const fs::path& base) {
  PipelineConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j, {"seed", "workers", "out_dir", "ingest", "reduce", "cluster", "merge", "groups", "permanova", "assign", "stages"},
               "config");
    take(j, "seed", c.seed);
    take(j, "workers", c.workers);
    take_path(j, "out_dir", c.out_dir, base);
    if (j.contains("ingest")) {
      const auto& s = j.at("ingest");
      check_keys(s, {"posts", "embeddings", "t0", "t_end", "n_daily_grid", "week_len_days"}, "ingest");
      take_path(s, "posts", c.posts, base);
      take_path(s, "embeddings", c.embeddings, base);
      if (s.contains("t0") && !s.at("t0").is_null()) c.t0 = s.at("t0").get<std::string>();
      if (s.contains("t_end") && !s.at("t_end").is_null()) c.t_end = s.at("t_end").get<std::string>();
      take(s, "n_daily_grid", c.n_daily_grid);
      take(s, "week_len_days", c.week_len_days);
    }
    if (j.contains("reduce")) {
      const auto& s = j.at("reduce");
      check_keys(s, {"external", "fraction", "dim"}, "reduce");
      take(s, "external", c.reduce_external);
      take(s, "fraction", c.reduce_fraction);
      take(s, "dim", c.reduce_dim);
    }
    if (j.contains("cluster")) {
      const auto& s = j.at("cluster");
      check_keys(s, {"min_cluster_size", "min_samples", "max_depth"}, "cluster");
      take(s, "min_cluster_size", c.min_cluster_size);
      c.min_samples = c.min_cluster_size;
      take(s, "min_samples", c.min_samples);
      take(s, "max_depth", c.max_depth);
    }
    if (j.contains("merge")) {
      const auto& s = j.at("merge");
      check_keys(s, {"scorer", "constant_score", "alpha", "reps", "n_in", "n_out", "requests", "responses"}, "merge");
      take(s, "scorer", c.scorer);
      take(s, "constant_score", c.constant_score);
      take(s, "alpha", c.alpha);
      take(s, "reps", c.coherence_reps);
      take(s, "n_in", c.coherence_in);
      take(s, "n_out", c.coherence_out);
      take_path(s, "requests", c.coherence_requests, base);
      take_path(s, "responses", c.coherence_responses, base);
    }
    if (j.contains("groups")) {
      const auto& s = j.at("groups");
      check_keys(s, {"min_posts", "alpha"}, "groups");
      take(s, "min_posts", c.min_posts);
      take(s, "alpha", c.trend_alpha);
    }
    if (j.contains("permanova")) {
      const auto& s = j.at("permanova");
      check_keys(s, {"permutations", "pairs", "freqs"}, "permanova");
      take(s, "permutations", c.permutations);
      take(s, "pairs", c.pairs);
      take(s, "freqs", c.freqs);
    }
    if (j.contains("assign")) {
      const auto& s = j.at("assign");
      check_keys(s, {"k", "topic_level", "test_fraction"}, "assign");
      take(s, "k", c.knn_k);
      take(s, "topic_level", c.topic_level);
      take(s, "test_fraction", c.test_fraction);
    }
    if (j.contains("stages")) {
      const auto& s = j.at("stages");
      check_keys(s, {"ingest", "reduce", "cluster", "merge", "groups", "trajectories", "permanova", "assign"}, "stages");
      take(s, "ingest", c.stages.ingest);
      take(s, "reduce", c.stages.reduce);
      take(s, "cluster", c.stages.cluster);
      take(s, "merge", c.stages.merge);
      take(s, "groups", c.stages.groups);
      take(s, "trajectories", c.stages.trajectories);
      take(s, "permanova", c.stages.permanova);
      take(s, "assign", c.stages.assign);
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  for (const auto& p : c.pairs)
    if (p != "increasing" && p != "decreasing") throw FormatError("config: unknown permanova pair " + p);
  for (const auto& f : c.freqs)
    if (f != "daily" && f != "weekly") throw FormatError("config: unknown permanova frequency " + f);
  if (c.scorer != "reference" && c.scorer != "constant" && c.scorer != "external")
    throw FormatError("config: unknown scorer " + c.scorer);
  if (c.workers == 0) throw FormatError("config: workers must be positive");
  return c;
}

PipelineConfig load_config(const fs::path& path) { return parse_config(read_text(path), path.parent_path()); }

std::string config_to_json(const PipelineConfig& c) {
  auto opt = [](const auto& o) { return o ? json(*o) : json(nullptr); };
  auto opt_path = [](const std::optional<fs::path>& o) { return o ? json(o->string()) : json(nullptr); };
  const json j = {
      {"seed", c.seed},
      {"workers", c.workers},
      {"out_dir", c.out_dir.string()},
      {"ingest",
       {{"posts", c.posts.string()},
        {"embeddings", opt_path(c.embeddings)},
        {"t0", opt(c.t0)},
        {"t_end", opt(c.t_end)},
        {"n_daily_grid", c.n_daily_grid},
        {"week_len_days", c.week_len_days}}},
      {"reduce", {{"external", c.reduce_external}, {"fraction", c.reduce_fraction}, {"dim", c.reduce_dim}}},
      {"cluster",
       {{"min_cluster_size", c.min_cluster_size}, {"min_samples", c.min_samples}, {"max_depth", c.max_depth}}},
      {"merge",
       {{"scorer", c.scorer},
        {"constant_score", c.constant_score},
        {"alpha", c.alpha},
        {"reps", c.coherence_reps},
        {"n_in", c.coherence_in},
        {"n_out", c.coherence_out},
        {"requests", opt_path(c.coherence_requests)},
        {"responses", opt_path(c.coherence_responses)}}},
      {"groups", {{"min_posts", c.min_posts}, {"alpha", c.trend_alpha}}},
      {"permanova", {{"permutations", c.permutations}, {"pairs", c.pairs}, {"freqs", c.freqs}}},
      {"assign", {{"k", c.knn_k}, {"topic_level", c.topic_level}, {"test_fraction", c.test_fraction}}},
      {"stages",
       {{"ingest", c.stages.ingest},
        {"reduce", c.stages.reduce},
        {"cluster", c.stages.cluster},
        {"merge", c.stages.merge},
        {"groups", c.stages.groups},
        {"trajectories", c.stages.trajectories},
        {"permanova", c.stages.permanova},
        {"assign", c.stages.assign}}}};
  return j.dump(2);
}

std::uint64_t effective_seed(std::uint64_t configured) {
  const char* env = std::getenv("TOXTRAJ_SEED");
  if (!env || !*env) return configured;
  std::uint64_t v = 0;
  const std::string_view s(env);
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw InvalidArgument("TOXTRAJ_SEED must be a non-negative integer, got '" + std::string(s) + "'");
  return v;
}

std::uint64_t stage_seed(std::uint64_t root, std::string_view stage) { return stream_key(root, fnv1a(stage)); }

std::string file_hash(const fs::path& path) {
  const std::string bytes = read_text(path);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

// ---------------------------------------------------------------------------

namespace stages {

std::size_t ingest(const fs::path& posts, const std::optional<fs::path>& embeddings, const StudyWindow& window,
                   const fs::path& corpus_dir, const std::optional<fs::path>& toxicity_responses) {
  require_file(posts, "posts file");
  auto records = read_posts(posts);
  if (toxicity_responses) apply_toxicity_responses(records, *toxicity_responses);
  std::optional<EmbeddingMatrix> emb;
  if (embeddings) emb = read_embeddings(*embeddings);
  const Corpus corpus = assemble_corpus(std::move(records), std::move(emb), window);
  save_corpus(corpus, corpus_dir);
  return corpus.dropped_outside_window();
}

void reduce(const fs::path& in, const fs::path& out, std::size_t dim, double fraction, std::uint64_t seed,
            bool external, unsigned workers, const std::optional<fs::path>& model_out) {
  require_file(in, "embeddings");
  const EmbeddingMatrix x = read_embeddings(in);
  ReducerModel model;
  if (external) {
    if (x.d() != dim)
      throw InvalidArgument("reduce: external vectors have " + std::to_string(x.d()) + " columns, expected " +
                            std::to_string(dim));
    model = external_model(dim);
  } else {
    model = fit_on_sample(x, fraction, dim, seed);
  }
  write_embeddings(out, transform(model, x, workers));
  if (model_out) write_reducer_model(*model_out, model);
}

void cluster(const fs::path& embeddings, const fs::path& tree_out, std::size_t min_cluster_size,
             std::size_t min_samples, int max_depth, unsigned workers) {
  require_file(embeddings, "embeddings");
  const EmbeddingMatrix x = read_embeddings(embeddings);
  hdbscan::Options o;
  o.workers = workers;
  const auto tree = hdbscan::recursive_cluster(x.values, {min_cluster_size, min_samples}, max_depth, o);
  hdbscan::write_tree(tree_out, tree);
}

void merge(const fs::path& tree_path, const fs::path& corpus_dir, const fs::path& embeddings,
           const MergeSettings& s, const fs::path& topics_out) {
  require_file(tree_path, "tree");
  const auto tree = hdbscan::read_tree(tree_path);
  const Corpus corpus = load_corpus_dir(corpus_dir);
  const EmbeddingMatrix x = read_embeddings(embeddings);
  if (x.n() != tree.n_points)
    throw InvalidArgument("merge: tree covers " + std::to_string(tree.n_points) + " rows but embeddings have " +
                          std::to_string(x.n()));
  std::vector<std::string> texts(x.n());
  std::vector<std::optional<double>> toxicity(x.n());
  for (std::size_t r = 0; r < x.n(); ++r) {
    const auto idx = corpus.find_post(x.row_ids[r]);
    if (!idx) throw InvalidArgument("merge: embedding row " + x.row_ids[r] + " has no post in the corpus");
    const auto& p = corpus.posts()[*idx];
    if (p.text) texts[r] = *p.text;
    toxicity[r] = p.toxicity;
  }
  std::unique_ptr<coherence::CoherenceScorer> scorer;
  if (s.scorer == "reference") {
    scorer = std::make_unique<coherence::ReferenceScorer>(x.values, s.workers);
  } else if (s.scorer == "constant") {
    scorer = std::make_unique<coherence::ConstantScorer>(s.constant_score);
  } else if (s.scorer == "external") {
    if (!s.requests || !s.responses) throw InvalidArgument("merge: external scorer needs request and response paths");
    scorer = std::make_unique<coherence::ExternalScorer>(std::move(texts), *s.requests, *s.responses);
  } else {
    throw InvalidArgument("merge: unknown scorer " + s.scorer);
  }
  coherence::MergeConfig mc;
  mc.alpha = s.alpha;
  mc.sampling = {s.reps, s.n_in, s.n_out, s.seed};
  auto topics = coherence::merge_pass(tree, *scorer, mc);
  coherence::annotate_toxicity(topics, toxicity);
  coherence::write_topics(topics_out, topics);
}

void groups(const fs::path& corpus_dir, const fs::path& groups_out, std::size_t min_posts, double alpha) {
  const Corpus corpus = load_corpus_dir(corpus_dir);
  const auto active = trajectory::select_active_users(corpus, min_posts);
  auto g = trajectory::assign_groups(corpus, active, alpha);
  g.min_posts = min_posts;
  trajectory::write_groups(groups_out, g, corpus);
}

void trajectories(const fs::path& corpus_dir, const fs::path& embeddings, const fs::path& groups_path,
                  const fs::path& traj_out, unsigned workers) {
  const Corpus corpus = load_corpus_dir(corpus_dir);
  require_file(embeddings, "embeddings");
  const EmbeddingMatrix x = read_embeddings(embeddings);
  const auto g = trajectory::read_groups(groups_path);
  std::vector<std::string> users;
  for (const auto& u : g.users) users.push_back(u.user_id);
  const auto set = trajectory::build_trajectories(corpus, x, users, workers);
  trajectory::write_trajectories(traj_out, set);
}

namespace {

Matrix stack(const trajectory::TrajectorySet& set, const std::vector<std::string>& users, bool weekly,
             std::size_t& missing) {
  Matrix out;
  missing = 0;
  for (const auto& id : users) {
    const auto* t = set.find(id);
    if (!t) {
      ++missing;
      continue;
    }
    const auto v = weekly ? t->flattened_weekly() : t->flattened_daily();
    if (out.rows == 0) out = Matrix(0, v.size());
    out.values.insert(out.values.end(), v.begin(), v.end());
    ++out.rows;
  }
  return out;
}

}  // namespace

std::string permanova_json(const fs::path& traj, const fs::path& groups_path, const std::string& pair,
                           const std::string& freq, std::size_t permutations, std::uint64_t seed, unsigned workers,
                           int week_len_days) {
  if (pair != "increasing" && pair != "decreasing") throw InvalidArgument("permanova: pair must be increasing or decreasing");
  if (freq != "daily" && freq != "weekly") throw InvalidArgument("permanova: freq must be daily or weekly");
  const auto set = trajectory::read_trajectories(traj, week_len_days);
  const auto g = trajectory::read_groups(groups_path);
  const auto& ga = g.group(pair);
  const auto& gb = g.group(pair + "_ref");
  std::size_t miss_a = 0, miss_b = 0;
  const Matrix a = stack(set, ga.users, freq == "weekly", miss_a);
  const Matrix b = stack(set, gb.users, freq == "weekly", miss_b);
  json row = {{"pair", pair},         {"freq", freq},           {"group_a", pair},
              {"group_b", pair + "_ref"}, {"missing_a", miss_a}, {"missing_b", miss_b}};
  const auto r = permanova::permanova_test(a, b, permutations, seed, workers);
  row["n_a"] = r.n_a;
  row["n_b"] = r.n_b;
  row["pseudo_f"] = r.f_infinite ? json(nullptr) : json(r.pseudo_f);
  row["f_infinite"] = r.f_infinite;
  row["p_value"] = r.p_value;
  row["eta_squared"] = r.eta_squared;
  row["ss_between"] = r.ss_between;
  row["ss_within"] = r.ss_within;
  row["n_permutations"] = r.n_permutations;
  row["df"] = {r.df_between, r.df_within};
  row["seed"] = r.seed;
  return row.dump();
}

namespace {

json runs_json(const assign::LabeledTrajectory& lt) {
  json runs = json::array();
  for (const auto& r : lt.runs) runs.push_back({{"topic", r.topic}, {"begin", r.begin}, {"end", r.end}});
  json labels = json::array();
  for (const auto& l : lt.labels) labels.push_back(l ? json(*l) : json(nullptr));
  return {{"labels", labels}, {"runs", runs}, {"unlabeled", lt.unlabeled}};
}

}  // namespace

void assign(const fs::path& topics_path, const fs::path& embeddings, const fs::path& traj,
            const std::optional<fs::path>& groups_path, std::size_t k, int topic_level, double test_fraction,
            std::uint64_t seed, unsigned workers, const fs::path& labeled_out, int week_len_days) {
  const auto topics = coherence::read_topics(topics_path);
  const EmbeddingMatrix x = read_embeddings(embeddings);
  if (x.n() != topics.n_points) throw InvalidArgument("assign: topics and embeddings cover different row counts");
  const auto labels = coherence::topic_labels(topics, topic_level);
  std::vector<std::size_t> rows;
  std::vector<int> y;
  for (std::size_t r = 0; r < labels.size(); ++r)
    if (labels[r] >= 0) {
      rows.push_back(r);
      y.push_back(labels[r]);
    }
  const Matrix pts = hdbscan::select_rows(x.values, rows);

  const auto split = assign::stratified_split(y, test_fraction, seed);
  auto subset = [&](const std::vector<std::size_t>& idx, Matrix& m, std::vector<int>& lab) {
    std::vector<std::size_t> r;
    for (auto i : idx) {
      r.push_back(i);
      lab.push_back(y[i]);
    }
    m = hdbscan::select_rows(pts, r);
  };
  Matrix train, test;
  std::vector<int> y_train, y_test;
  subset(split.train, train, y_train);
  subset(split.test, test, y_test);
  json f1 = nullptr;
  if (!split.test.empty()) {
    const auto model = assign::fit_knn(train, y_train, k);
    const auto s = assign::evaluate_f1(model, test, y_test, workers);
    f1 = {{"macro_f1", s.macro_f1}, {"micro_f1", s.micro_f1}, {"n_test", s.n}};
  }
  const auto model = assign::fit_knn(pts, y, k);

  const auto set = trajectory::read_trajectories(traj, week_len_days);
  std::vector<std::pair<std::string, std::vector<std::string>>> members;
  if (groups_path) {
    const auto g = trajectory::read_groups(*groups_path);
    for (const char* name : {"increasing", "increasing_ref", "decreasing", "decreasing_ref", "no_trend"})
      members.emplace_back(name, g.group(name).users);
  } else {
    std::vector<std::string> all;
    for (const auto& u : set.users) all.push_back(u.user_id);
    members.emplace_back("all", std::move(all));
  }
  json groups = json::object();
  for (const auto& [name, users] : members) {
    std::vector<const Matrix*> daily, weekly;
    for (const auto& id : users)
      if (const auto* t = set.find(id)) {
        daily.push_back(&t->daily);
        weekly.push_back(&t->weekly);
      }
    if (daily.empty()) {
      groups[name] = {{"n_users", 0}};
      continue;
    }
    const Matrix d = trajectory::group_average_trajectory(daily);
    const Matrix w = trajectory::group_average_trajectory(weekly);
    groups[name] = {{"n_users", daily.size()},
                    {"daily", runs_json(assign::label_trajectory(model, d))},
                    {"weekly", runs_json(assign::label_trajectory(model, w))}};
  }
  json topic_info = json::object();
  std::set<int> used(y.begin(), y.end());
  for (int id : used) {
    const auto& n = topics.node(id);
    topic_info[std::to_string(id)] = {{"level", n.level},
                                      {"member_count", n.member_rows.size()},
                                      {"mean_toxicity", n.mean_toxicity ? json(*n.mean_toxicity) : json(nullptr)},
                                      {"label", n.label ? json(*n.label) : json(nullptr)}};
  }
  const json doc = {{"k", k},
                    {"topic_level", topic_level},
                    {"test_fraction", test_fraction},
                    {"seed", seed},
                    {"n_labeled", y.size()},
                    {"n_train", split.train.size()},
                    {"n_test", split.test.size()},
                    {"f1", f1},
                    {"week_len_days", week_len_days},
                    {"topics", topic_info},
                    {"groups", groups}};
  write_text(labeled_out, doc.dump(1) + "\n");
}

}  // namespace stages

// ---------------------------------------------------------------------------

fs::path run_pipeline(const PipelineConfig& config) {
  const std::uint64_t root = effective_seed(config.seed);
  const bool env_seed = root != config.seed || std::getenv("TOXTRAJ_SEED");
  const fs::path dir = config.out_dir;
  fs::create_directories(dir);
  const StudyWindow window = window_of(config);

  const fs::path corpus_dir = dir / "corpus";
  const fs::path corpus_emb = corpus_dir / "embeddings.emb";
  const fs::path reduced = dir / "reduced.emb";
  const fs::path reducer = dir / "reducer.json";
  const fs::path tree = dir / "tree.json";
  const fs::path topics = dir / "topics.json";
  const fs::path groups = dir / "groups.json";
  const fs::path traj = dir / "traj.bin";
  const fs::path perm = dir / "permanova.json";
  const fs::path labeled = dir / "labeled.json";
  // With reduce disabled the corpus embeddings are used as-is.
  const fs::path e5 = config.stages.reduce ? reduced : corpus_emb;

  json manifest = {{"version", kVersion},
                   {"root_seed", root},
                   {"seed_source", env_seed ? "TOXTRAJ_SEED" : "config"},
                   {"workers", config.workers},
                   {"window",
                    {{"t0", window.t0},
                     {"t_end", window.t_end},
                     {"n_daily_grid", window.n_daily_grid},
                     {"week_len_days", window.week_len_days}}},
                   {"config", json::parse(config_to_json(config))},
                   {"stages", json::array()}};
  const fs::path manifest_path = dir / "manifest.json";

  auto files = [](std::initializer_list<std::pair<const char*, fs::path>> list) {
    json j = json::object();
    for (const auto& [name, path] : list) {
      json e = {{"path", path.string()}};
      if (fs::exists(path) && fs::is_regular_file(path)) e["hash"] = file_hash(path);
      j[name] = e;
    }
    return j;
  };

  struct Stage {
    const char* name;
    bool enabled;
    std::function<void(std::uint64_t)> body;
    std::function<json()> inputs;
    std::function<json()> outputs;
  };
  stages::MergeSettings ms;
  ms.scorer = config.scorer;
  ms.constant_score = config.constant_score;
  ms.alpha = config.alpha;
  ms.reps = config.coherence_reps;
  ms.n_in = config.coherence_in;
  ms.n_out = config.coherence_out;
  ms.requests = config.coherence_requests ? config.coherence_requests : std::optional<fs::path>(dir / "coherence_requests.jsonl");
  ms.responses = config.coherence_responses ? config.coherence_responses : std::optional<fs::path>(dir / "coherence_responses.jsonl");
  ms.workers = config.workers;

  const std::vector<Stage> plan = {
      {"ingest", config.stages.ingest,
       [&](std::uint64_t) { stages::ingest(config.posts, config.embeddings, window, corpus_dir); },
       [&] {
         json j = files({{"posts", config.posts}});
         if (config.embeddings) j.update(files({{"embeddings", *config.embeddings}}));
         return j;
       },
       [&] {
         return files({{"posts", corpus_dir / "posts.jsonl"}, {"window", corpus_dir / "window.json"},
                       {"embeddings", corpus_emb}});
       }},
      {"reduce", config.stages.reduce,
       [&](std::uint64_t s) {
         stages::reduce(corpus_emb, reduced, config.reduce_dim, config.reduce_fraction, s, config.reduce_external,
                        config.workers, reducer);
       },
       [&] { return files({{"embeddings", corpus_emb}}); },
       [&] { return files({{"reduced", reduced}, {"model", reducer}}); }},
      {"cluster", config.stages.cluster,
       [&](std::uint64_t) {
         stages::cluster(e5, tree, config.min_cluster_size, config.min_samples, config.max_depth, config.workers);
       },
       [&] { return files({{"reduced", e5}}); }, [&] { return files({{"tree", tree}}); }},
      {"merge", config.stages.merge,
       [&](std::uint64_t s) {
         auto m = ms;
         m.seed = s;
         stages::merge(tree, corpus_dir, e5, m, topics);
       },
       [&] { return files({{"tree", tree}, {"reduced", e5}, {"posts", corpus_dir / "posts.jsonl"}}); },
       [&] { return files({{"topics", topics}}); }},
      {"groups", config.stages.groups,
       [&](std::uint64_t) { stages::groups(corpus_dir, groups, config.min_posts, config.trend_alpha); },
       [&] { return files({{"posts", corpus_dir / "posts.jsonl"}}); }, [&] { return files({{"groups", groups}}); }},
      {"trajectories", config.stages.trajectories,
       [&](std::uint64_t) { stages::trajectories(corpus_dir, e5, groups, traj, config.workers); },
       [&] { return files({{"posts", corpus_dir / "posts.jsonl"}, {"reduced", e5}, {"groups", groups}}); },
       [&] { return files({{"trajectories", traj}}); }},
      {"permanova", config.stages.permanova,
       [&](std::uint64_t s) {
         json rows = json::array();
         for (const auto& pair : config.pairs)
           for (const auto& freq : config.freqs) {
             try {
               rows.push_back(json::parse(stages::permanova_json(traj, groups, pair, freq, config.permutations, s,
                                                                 config.workers, config.week_len_days)));
             } catch (const InvalidArgument& e) {
               // A pair without enough users is reported, not fatal.
               rows.push_back({{"pair", pair}, {"freq", freq}, {"error", e.what()}});
             }
           }
         write_text(perm, json{{"rows", rows}}.dump(1) + "\n");
       },
       [&] { return files({{"trajectories", traj}, {"groups", groups}}); },
       [&] { return files({{"permanova", perm}}); }},
      {"assign", config.stages.assign,
       [&](std::uint64_t s) {
         stages::assign(topics, e5, traj, groups, config.knn_k, config.topic_level, config.test_fraction, s,
                        config.workers, labeled, config.week_len_days);
       },
       [&] { return files({{"topics", topics}, {"reduced", e5}, {"trajectories", traj}, {"groups", groups}}); },
       [&] { return files({{"labeled", labeled}}); }},
  };

  auto flush = [&] { write_text(manifest_path, manifest.dump(1) + "\n"); };
  for (const auto& st : plan) {
    const std::uint64_t s = stage_seed(root, st.name);
    json rec = {{"name", st.name}, {"seed", s}};
    if (!st.enabled) {
      rec["status"] = "skipped";
      manifest["stages"].push_back(rec);
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    try {
      rec["inputs"] = st.inputs();
      st.body(s);
      rec["outputs"] = st.outputs();
      rec["status"] = "ok";
    } catch (const std::exception& e) {
      rec["status"] = "failed";
      rec["error"] = e.what();
      rec["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      manifest["stages"].push_back(rec);
      flush();
      throw StageError(st.name, e.what());
    }
    rec["wall_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    manifest["stages"].push_back(rec);
  }
  flush();
  return manifest_path;
}

}  // namespace toxtraj
