#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "toxtraj/corpus.hpp"
#include "toxtraj/matrix.hpp"

namespace toxtraj::trajectory {

inline constexpr std::size_t kDefaultMinPosts = 50;

struct ActiveUser {
  std::string user_id;
  std::size_t post_count = 0;
  bool operator==(const ActiveUser&) const = default;
};

/// Users with at least min_posts posts, sorted by user_id.
std::vector<ActiveUser> select_active_users(const Corpus& corpus, std::size_t min_posts = kDefaultMinPosts);

enum class Group { increasing, decreasing, no_trend };
std::string_view to_string(Group g);
Group group_from_string(std::string_view s);

struct UserGroupAssignment {
  std::string user_id;
  std::size_t post_count = 0;
  Group group = Group::no_trend;
  double slope = 0.0;  ///< toxicity points per second
  double p_value = 1.0;
  double mean_toxicity = 0.0;  ///< 0..100
  bool degenerate = false;     ///< regression undefined; counted as no-trend
  bool increasing_ref = false;
  bool decreasing_ref = false;

  bool operator==(const UserGroupAssignment&) const = default;
};

struct GroupSummary {
  std::size_t size = 0;
  double mean_toxicity = 0.0;  ///< mean of user means
  std::vector<std::string> users;
  bool operator==(const GroupSummary&) const = default;
};

struct Grouping {
  double alpha = 0.05;
  std::size_t min_posts = kDefaultMinPosts;
  std::vector<UserGroupAssignment> users;
  GroupSummary increasing, decreasing, no_trend, increasing_ref, decreasing_ref;
  std::size_t reference_overlap = 0;
  std::size_t degenerate = 0;

  const GroupSummary& group(std::string_view name) const;
  bool operator==(const Grouping&) const = default;
};

/// The n candidates whose mean toxicity is closest to target, ties broken by
/// user_id; returned in selection order.
std::vector<std::string> matched_reference(std::span<const UserGroupAssignment> candidates, double target,
                                           std::size_t n);

/// Regresses each active user's toxicity (0..100) on raw timestamps (s).
/// p < alpha splits increasing / decreasing by slope sign; everything else
/// is no-trend. When match_references is set, reference groups of the same
/// sizes as the trend groups are drawn from the no-trend users (independently
/// of each other, so they may overlap).
Grouping assign_groups(const Corpus& corpus, std::span<const ActiveUser> active, double alpha = 0.05,
                       bool match_references = true);

/// Weekly mean toxicity of posts by each group's users; NaN where empty.
std::vector<double> weekly_group_toxicity(const Corpus& corpus, std::span<const std::string> users);

// Interpolation ----------------------------------------------------------------

/// Posts as (timestamp, embedding row) pairs; rows of `embeddings`.
Matrix interpolate_daily(std::span<const Timestamp> timestamps, const Matrix& embeddings, const StudyWindow& window);

/// Row w = mean of daily rows [w * week_len, (w + 1) * week_len); trailing
/// rows that do not fill a week are dropped.
Matrix weekly_average(const Matrix& daily, int week_len_days = 7, std::optional<std::size_t> expected_rows = {});

struct UserTrajectory {
  std::string user_id;
  Matrix daily;
  Matrix weekly;
  std::span<const double> flattened_daily() const { return daily.values; }
  std::span<const double> flattened_weekly() const { return weekly.values; }
  bool operator==(const UserTrajectory&) const = default;
};

/// Coordinate-wise mean across trajectories, pairwise summation.
Matrix group_average_trajectory(std::span<const Matrix* const> members);

struct TrajectorySet {
  int week_len_days = 7;
  std::vector<UserTrajectory> users;
  std::size_t excluded_no_embeddings = 0;

  const UserTrajectory* find(std::string_view user_id) const;
  bool operator==(const TrajectorySet&) const = default;
};

/// Trajectories for every listed user that has at least one embedded post.
/// `reduced` rows are matched to posts by post_id.
TrajectorySet build_trajectories(const Corpus& corpus, const EmbeddingMatrix& reduced,
                                 std::span<const std::string> users, unsigned workers = 1);

/// TRJ1 binary: magic, u32 users, u32 T, u32 k, then per user a u32 id
/// length, the id bytes, and T x k float64 (daily grid). Weekly grids are
/// recomputed on read.
void write_trajectories(const std::filesystem::path& path, const TrajectorySet& set);
TrajectorySet read_trajectories(const std::filesystem::path& path, int week_len_days = 7);

void write_groups(const std::filesystem::path& path, const Grouping& grouping, const Corpus& corpus);
Grouping read_groups(const std::filesystem::path& path);

}  // namespace toxtraj::trajectory
