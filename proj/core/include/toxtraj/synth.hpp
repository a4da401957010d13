#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "toxtraj/corpus.hpp"
#include "toxtraj/matrix.hpp"

namespace toxtraj::synth {

struct ParentBlob {
  std::vector<double> center;
  std::vector<std::vector<double>> sub_centers;
  double sigma = 1.0;             ///< sub-blob standard deviation
  std::size_t points_per_sub = 200;
  double halo_sigma = 0.0;        ///< diffuse cloud around the parent centre
  std::size_t halo_points = 0;
  /// When > 0 the sub-blob labels carry no geometry: each point of this
  /// parent gets one of this many level-2 labels at random.
  std::size_t random_labels = 0;
};

struct HierarchyConfig {
  std::size_t dim = 5;
  std::vector<ParentBlob> parents;
  bool separable = false;
  /// Required gap between any two sub-centres, in units of the larger sigma,
  /// when `separable` is set.
  double separation_sigmas = 10.0;
};

/// Points with their planted labels. level2 is a global sub-blob index, -1
/// for halo points.
struct Blobs {
  Matrix points;
  std::vector<int> level1;
  std::vector<int> level2;
};

/// Throws InvalidArgument for malformed configs or a separable config whose
/// sub-centres are closer than separation_sigmas.
void validate(const HierarchyConfig& config);
Blobs generate_hierarchical_blobs(const HierarchyConfig& config, std::uint64_t seed);

/// Three parents on an equilateral triangle (side `side`) in dims 0-1, two
/// sub-blobs each at +-offset along dim 2 + p, plus a halo per parent.
HierarchyConfig three_by_two(double side = 7.0, double offset = 3.0, double sigma = 1.0, std::size_t per_sub = 250,
                             double halo_sigma = 1.5, std::size_t halo_points = 250);
/// Three single-Gaussian parents with no sub-structure, `side` apart (six
/// parent sigmas by default). The two level-2 labels are assigned at random.
HierarchyConfig null_split(double side = 12.0, std::size_t per_parent = 750, double parent_sigma = 2.0);

struct TrendMix {
  double increasing = 0.1;
  double decreasing = 0.1;
  double flat = 0.8;
  double slope_min = 0.04;  ///< toxicity points per day
  double slope_max = 0.12;
  double base_min = 35.0;
  double base_max = 60.0;
  double noise_min = 3.0;
  double noise_max = 5.0;
};

struct Divergence {
  int from_topic = 0;  ///< global sub-blob index
  int to_topic = 1;
  double switch_fraction = 0.5;  ///< of the window
  double focus = 0.7;            ///< share of posts that follow the schedule
};

struct ScenarioConfig {
  std::size_t n_users = 200;
  std::size_t posts_min = 50;
  std::size_t posts_max = 80;
  StudyWindow window = study_window();
  HierarchyConfig hierarchy = three_by_two();
  TrendMix trend_mix;
  std::optional<Divergence> divergence;
  double halo_fraction = 1.0 / 3.0;
  /// 0: emit the 5-D (hierarchy.dim) points; otherwise embed them in an
  /// orthonormal subspace of this dimension plus ambient_noise.
  std::size_t ambient_dim = 0;
  double ambient_noise = 1e-6;
  std::uint64_t seed = 0;
};

enum class PlantedTrend { increasing, decreasing, flat };

struct UserTruth {
  std::string user_id;
  PlantedTrend trend = PlantedTrend::flat;
  double slope_per_day = 0.0;
  double base = 0.0;
  double noise_sd = 0.0;
  bool diverging = false;
};

struct SynthCorpus {
  std::vector<PostRecord> posts;
  EmbeddingMatrix embeddings;  ///< one row per post, same order as posts
  std::vector<int> post_level1;
  std::vector<int> post_level2;
  std::vector<UserTruth> users;
  /// Ambient basis (ambient_dim x hierarchy.dim), empty when not embedded.
  Matrix basis;
};

void validate(const ScenarioConfig& config);
SynthCorpus generate_user_streams(const ScenarioConfig& config);

/// Two groups of n_per_group i.i.d. standard-normal vectors of length T*dim.
std::pair<Matrix, Matrix> generate_null_pair(std::size_t n_per_group, std::size_t T, std::size_t dim,
                                             std::uint64_t seed);

ScenarioConfig read_scenario(const std::filesystem::path& path);
void write_scenario(const std::filesystem::path& path, const ScenarioConfig& config);

/// Writes posts.jsonl, embeddings.emb (+ .ids), and truth.json.
void write_synth(const std::filesystem::path& dir, const SynthCorpus& corpus, const ScenarioConfig& config);

}  // namespace toxtraj::synth
