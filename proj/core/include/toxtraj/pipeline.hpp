#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "toxtraj/corpus.hpp"
#include "toxtraj/error.hpp"

namespace toxtraj {

/// Every pipeline parameter; defaults reproduce the reference study setup.
struct PipelineConfig {
  std::uint64_t seed = 0;
  unsigned workers = 1;
  std::filesystem::path out_dir = "run";

  // ingest
  std::filesystem::path posts;
  std::optional<std::filesystem::path> embeddings;
  std::optional<std::string> t0;     ///< ISO-8601, default window start
  std::optional<std::string> t_end;  ///< ISO-8601, default window end
  int n_daily_grid = kDefaultDailyGrid;
  int week_len_days = kDefaultWeekLength;

  // reduce
  bool reduce_external = false;  ///< embeddings are already reduced
  double reduce_fraction = 0.10;
  std::size_t reduce_dim = 5;

  // cluster
  std::size_t min_cluster_size = 1000;
  std::size_t min_samples = 1000;
  int max_depth = 6;

  // merge
  std::string scorer = "reference";  ///< reference | constant | external
  int constant_score = 3;
  double alpha = 0.05;
  std::size_t coherence_reps = 30;
  std::size_t coherence_in = 30;
  std::size_t coherence_out = 30;
  std::optional<std::filesystem::path> coherence_requests;
  std::optional<std::filesystem::path> coherence_responses;

  // groups
  std::size_t min_posts = 50;
  double trend_alpha = 0.05;

  // permanova
  std::size_t permutations = 4999;
  std::vector<std::string> pairs{"increasing", "decreasing"};
  std::vector<std::string> freqs{"daily", "weekly"};

  // assign
  std::size_t knn_k = 15;
  int topic_level = 2;
  double test_fraction = 0.2;

  struct Stages {
    bool ingest = true, reduce = true, cluster = true, merge = true, groups = true, trajectories = true,
         permanova = true, assign = true;
  } stages;
};

/// Execution order.
inline constexpr const char* kStageNames[] = {"ingest", "reduce",       "cluster",   "merge",
                                              "groups", "trajectories", "permanova", "assign"};

/// Parses a JSON config document; unknown keys are errors. Relative paths
/// resolve against `base_dir`.
PipelineConfig parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& config);

/// Root seed, replaced by TOXTRAJ_SEED when that variable is set.
std::uint64_t effective_seed(std::uint64_t configured);

/// Seed handed to a stage: the root seed folded with the stage name.
std::uint64_t stage_seed(std::uint64_t root, std::string_view stage);

/// A stage failed; what() names the stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error("stage " + stage + " failed: " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

/// 64-bit FNV-1a of a file's bytes, hex.
std::string file_hash(const std::filesystem::path& path);

/// Runs the enabled stages in order and writes <out_dir>/manifest.json
/// (also on failure, before StageError is thrown). Returns the manifest path.
std::filesystem::path run_pipeline(const PipelineConfig& config);

/// Markdown summary of a run with TSV blocks for the tabular parts.
std::string render_report(const std::filesystem::path& manifest_path);

// Stage kernels shared by `run` and the individual subcommands ---------------

namespace stages {

/// Loads, filters, and saves a corpus directory; returns the number of posts
/// dropped outside the window.
std::size_t ingest(const std::filesystem::path& posts, const std::optional<std::filesystem::path>& embeddings,
                   const StudyWindow& window, const std::filesystem::path& corpus_dir,
                   const std::optional<std::filesystem::path>& toxicity_responses = {});

void reduce(const std::filesystem::path& in, const std::filesystem::path& out, std::size_t dim, double fraction,
            std::uint64_t seed, bool external, unsigned workers,
            const std::optional<std::filesystem::path>& model_out = {});

void cluster(const std::filesystem::path& embeddings, const std::filesystem::path& tree_out,
             std::size_t min_cluster_size, std::size_t min_samples, int max_depth, unsigned workers);

struct MergeSettings {
  std::string scorer = "reference";
  int constant_score = 3;
  double alpha = 0.05;
  std::size_t reps = 30, n_in = 30, n_out = 30;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> requests, responses;
  unsigned workers = 1;
};

void merge(const std::filesystem::path& tree, const std::filesystem::path& corpus_dir,
           const std::filesystem::path& embeddings, const MergeSettings& settings,
           const std::filesystem::path& topics_out);

void groups(const std::filesystem::path& corpus_dir, const std::filesystem::path& groups_out, std::size_t min_posts,
            double alpha);

void trajectories(const std::filesystem::path& corpus_dir, const std::filesystem::path& embeddings,
                  const std::filesystem::path& groups, const std::filesystem::path& traj_out, unsigned workers);

/// One PERMANOVA row: trend group vs its matched reference group.
std::string permanova_json(const std::filesystem::path& traj, const std::filesystem::path& groups,
                           const std::string& pair, const std::string& freq, std::size_t permutations,
                           std::uint64_t seed, unsigned workers, int week_len_days = kDefaultWeekLength);

void assign(const std::filesystem::path& topics, const std::filesystem::path& embeddings,
            const std::filesystem::path& traj, const std::optional<std::filesystem::path>& groups, std::size_t k,
            int topic_level, double test_fraction, std::uint64_t seed, unsigned workers,
            const std::filesystem::path& labeled_out, int week_len_days = kDefaultWeekLength);

}  // namespace stages

}  // namespace toxtraj
