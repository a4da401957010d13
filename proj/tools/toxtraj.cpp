#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "toxtraj/coherence.hpp"
#include "toxtraj/corpus.hpp"
#include "toxtraj/pipeline.hpp"
#include "toxtraj/synth.hpp"

namespace fs = std::filesystem;
using namespace toxtraj;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitAwaiting = 3;

void write_or_print(const std::optional<std::string>& out, const std::string& text) {
  if (!out) {
    std::cout << text;
    return;
  }
  std::ofstream f(*out, std::ios::binary);
  if (!f) throw FormatError("cannot write " + *out);
  f << text;
}

std::optional<fs::path> as_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topic and toxicity trajectory analysis of user post streams"};
  app.require_subcommand(1);
  unsigned workers = 1;
  app.add_option("--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  // ingest
  std::string posts, embeddings, out, t0, t_end, tox_responses;
  int grid = 194, week_len = 7;
  auto* ingest = app.add_subcommand("ingest", "Filter posts to the study window and build a corpus directory");
  ingest->add_option("--posts", posts)->required();
  ingest->add_option("--embeddings", embeddings);
  ingest->add_option("--out", out, "Corpus directory")->required();
  ingest->add_option("--t0", t0);
  ingest->add_option("--t-end", t_end);
  ingest->add_option("--grid", grid);
  ingest->add_option("--week-len", week_len);
  ingest->add_option("--toxicity-responses", tox_responses, "Rater answers to apply to posts without toxicity");

  auto* tox_req = app.add_subcommand("toxicity-requests", "Write toxicity rating requests for unrated posts");
  tox_req->add_option("--posts", posts)->required();
  tox_req->add_option("--out", out)->required();

  // reduce
  std::string in;
  std::size_t dim = 5;
  double fraction = 0.10;
  std::uint64_t seed = 0;
  bool external = false;
  std::string model_out;
  auto* reduce = app.add_subcommand("reduce", "Fit a reducer on a sample and project all embeddings");
  reduce->add_option("--in", in)->required();
  reduce->add_option("--out", out)->required();
  reduce->add_option("--dim", dim);
  reduce->add_option("--fraction", fraction);
  reduce->add_option("--seed", seed);
  reduce->add_flag("--external", external, "Input is already reduced; pass it through");
  reduce->add_option("--model-out", model_out);

  // cluster
  std::size_t mcs = 1000, ms = 0;
  int max_depth = 6;
  auto* cluster = app.add_subcommand("cluster", "Recursive HDBSCAN");
  cluster->add_option("--in", in)->required();
  cluster->add_option("--min-cluster-size", mcs);
  cluster->add_option("--min-samples", ms, "Defaults to --min-cluster-size");
  cluster->add_option("--max-depth", max_depth);
  cluster->add_option("--out", out)->required();

  // merge
  std::string tree, corpus;
  stages::MergeSettings msettings;
  std::string requests, responses;
  auto* merge = app.add_subcommand("merge", "Coherence-gated merge of the cluster tree");
  merge->add_option("--tree", tree)->required();
  merge->add_option("--corpus", corpus)->required();
  merge->add_option("--embeddings", embeddings, "Reduced embeddings the tree was built on")->required();
  merge->add_option("--scorer", msettings.scorer)->check(CLI::IsMember({"reference", "external", "constant"}));
  merge->add_option("--constant-score", msettings.constant_score)->check(CLI::Range(1, 5));
  merge->add_option("--alpha", msettings.alpha);
  merge->add_option("--seed", seed);
  merge->add_option("--reps", msettings.reps);
  merge->add_option("--n-in", msettings.n_in);
  merge->add_option("--n-out", msettings.n_out);
  merge->add_option("--requests", requests);
  merge->add_option("--responses", responses);
  merge->add_option("--out", out)->required();

  // groups / trajectories
  std::size_t min_posts = 50;
  double alpha = 0.05;
  auto* groups = app.add_subcommand("groups", "Per-user toxicity trend groups and matched references");
  groups->add_option("--corpus", corpus)->required();
  groups->add_option("--out", out)->required();
  groups->add_option("--min-posts", min_posts);
  groups->add_option("--alpha", alpha);

  std::string groups_path;
  auto* traj = app.add_subcommand("trajectories", "Interpolate per-user embedding trajectories");
  traj->add_option("--corpus", corpus)->required();
  traj->add_option("--embeddings", embeddings)->required();
  traj->add_option("--groups", groups_path)->required();
  traj->add_option("--out", out)->required();

  // permanova
  std::string traj_path, pair, freq;
  std::size_t perms = 4999;
  auto* perm = app.add_subcommand("permanova", "Trend group vs matched reference PERMANOVA");
  perm->add_option("--traj", traj_path)->required();
  perm->add_option("--groups", groups_path)->required();
  perm->add_option("--pair", pair)->required()->check(CLI::IsMember({"increasing", "decreasing"}));
  perm->add_option("--freq", freq)->required()->check(CLI::IsMember({"daily", "weekly"}));
  perm->add_option("--perms", perms);
  perm->add_option("--seed", seed);
  perm->add_option("--week-len", week_len);
  perm->add_option("--out", out, "Defaults to stdout");

  // assign
  std::string topics;
  std::size_t k = 15;
  int level = 2;
  double test_fraction = 0.2;
  auto* assign = app.add_subcommand("assign", "KNN topic labels for posts and group trajectories");
  assign->add_option("--topics", topics)->required();
  assign->add_option("--embeddings", embeddings)->required();
  assign->add_option("--traj", traj_path)->required();
  assign->add_option("--groups", groups_path, "Label per-group averages instead of the all-user average");
  assign->add_option("--k", k);
  assign->add_option("--level", level);
  assign->add_option("--test-fraction", test_fraction);
  assign->add_option("--seed", seed);
  assign->add_option("--week-len", week_len);
  assign->add_option("--out", out)->required();

  // synth
  std::string scenario, out_dir;
  std::optional<std::uint64_t> synth_seed;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted structure");
  synth->add_option("--scenario", scenario)->required();
  synth->add_option("--out-dir", out_dir)->required();
  synth->add_option("--seed", synth_seed);

  // run / report
  std::string config_path, manifest;
  auto* run = app.add_subcommand("run", "Run the configured pipeline");
  run->add_option("--config", config_path)->required();
  auto* report = app.add_subcommand("report", "Render a run manifest as markdown");
  report->add_option("--manifest", manifest)->required();
  report->add_option("--out", out);

  CLI11_PARSE(app, argc, argv);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    if (*ingest) {
      StudyWindowConfig wc;
      if (!t0.empty()) wc.t0 = parse_iso8601(t0);
      if (!t_end.empty()) wc.t_end = parse_iso8601(t_end);
      wc.n_daily_grid = grid;
      wc.week_len_days = week_len;
      const auto dropped = stages::ingest(posts, as_path(embeddings), study_window(wc), out, as_path(tox_responses));
      std::cerr << "ingest: dropped " << dropped << " posts outside the window\n";
    } else if (*tox_req) {
      write_toxicity_requests(out, read_posts(posts));
    } else if (*reduce) {
      stages::reduce(in, out, dim, fraction, seed, external, workers, as_path(model_out));
    } else if (*cluster) {
      stages::cluster(in, out, mcs, ms == 0 ? mcs : ms, max_depth, workers);
    } else if (*merge) {
      msettings.seed = seed;
      msettings.workers = workers;
      msettings.requests = as_path(requests);
      msettings.responses = as_path(responses);
      stages::merge(tree, corpus, embeddings, msettings, out);
    } else if (*groups) {
      stages::groups(corpus, out, min_posts, alpha);
    } else if (*traj) {
      stages::trajectories(corpus, embeddings, groups_path, out, workers);
    } else if (*perm) {
      const std::string row = stages::permanova_json(traj_path, groups_path, pair, freq, perms, seed, workers, week_len);
      write_or_print(out.empty() ? std::nullopt : std::optional<std::string>(out), row + "\n");
    } else if (*assign) {
      stages::assign(topics, embeddings, traj_path, as_path(groups_path), k, level, test_fraction, seed, workers, out,
                     week_len);
    } else if (*synth) {
      auto sc = synth::read_scenario(scenario);
      if (synth_seed) sc.seed = *synth_seed;
      synth::write_synth(out_dir, synth::generate_user_streams(sc), sc);
    } else if (*run) {
      auto cfg = load_config(config_path);
      if (app.get_option("--workers")->count() > 0) cfg.workers = workers;
      const auto m = run_pipeline(cfg);
      std::cout << m.string() << '\n';
    } else if (*report) {
      write_or_print(out.empty() ? std::nullopt : std::optional<std::string>(out), render_report(manifest));
    }
  } catch (const StageError& e) {
    std::cerr << "toxtraj: " << e.what() << '\n';
    return kExitFailure;
  } catch (const coherence::AwaitingResponses& e) {
    std::cerr << "toxtraj " << command << ": " << e.what() << '\n';
    return kExitAwaiting;
  } catch (const std::exception& e) {
    std::cerr << "toxtraj: stage " << command << " failed: " << e.what() << '\n';
    return kExitFailure;
  }
  return 0;
}
