#include <gtest/gtest.h>

#include <fstream>

#include "oracles.hpp"
#include "temp_dir.hpp"
#include "toxtraj/error.hpp"
#include "toxtraj/rng.hpp"
#include "toxtraj/trajectory.hpp"

using namespace toxtraj;
using namespace toxtraj::trajectory;
using testing_support::TempDir;

namespace {

constexpr Timestamp kDay = 86400;

struct Builder {
  StudyWindow w = study_window();
  std::vector<PostRecord> posts;
  EmbeddingMatrix emb;
  Builder() { emb.values = Matrix(0, 2); }

  void add(const std::string& user, Timestamp t, std::optional<double> tox, std::vector<double> e = {}) {
    PostRecord p;
    p.post_id = user + "_" + std::to_string(posts.size());
    p.user_id = user;
    p.timestamp = t;
    p.toxicity = tox;
    if (!e.empty()) {
      emb.values.values.insert(emb.values.values.end(), e.begin(), e.end());
      ++emb.values.rows;
      emb.row_ids.push_back(p.post_id);
    }
    posts.push_back(std::move(p));
  }
  Corpus build() const { return assemble_corpus(posts, emb.n() ? std::optional(emb) : std::nullopt, w); }
};

}  // namespace

TEST(ActiveUsers, BoundaryAtFifty) {
  Builder b;
  for (int n : {49, 50, 51})
    for (int i = 0; i < n; ++i) b.add("u" + std::to_string(n), b.w.t0 + i * 3600, 10.0);
  const auto active = select_active_users(b.build());
  ASSERT_EQ(active.size(), 2u);
  EXPECT_EQ(active[0], (ActiveUser{"u50", 50}));
  EXPECT_EQ(active[1], (ActiveUser{"u51", 51}));
  EXPECT_EQ(kDefaultMinPosts, 50u);
}

TEST(Groups, NoiseFreeSlopesAreExact) {
  Builder b;
  for (int u = 0; u < 30; ++u) {
    const double slope = u % 3 == 0 ? 0.1 : u % 3 == 1 ? -0.1 : 0.0;
    for (int i = 0; i < 60; ++i) {
      const Timestamp t = b.w.t0 + i * 2 * kDay + u;
      b.add("u" + std::to_string(u), t, 50.0 + slope * static_cast<double>(t - b.w.t0) / kDay);
    }
  }
  const auto c = b.build();
  const auto g = assign_groups(c, select_active_users(c));
  for (const auto& u : g.users) {
    const int id = std::stoi(u.user_id.substr(1));
    const Group want = id % 3 == 0 ? Group::increasing : id % 3 == 1 ? Group::decreasing : Group::no_trend;
    EXPECT_EQ(u.group, want) << u.user_id;
  }
  EXPECT_EQ(g.increasing.size, 10u);
  EXPECT_EQ(g.decreasing.size, 10u);
  EXPECT_EQ(g.increasing_ref.size, 10u);
  EXPECT_EQ(g.decreasing_ref.size, 10u);
  EXPECT_EQ(g.reference_overlap, 10u);
}

TEST(Groups, DegenerateUsersAreNoTrend) {
  Builder b;
  for (int i = 0; i < 50; ++i) b.add("same", b.w.t0 + 100, 40.0 + i);
  for (int i = 0; i < 50; ++i) b.add("unrated", b.w.t0 + i, i < 2 ? std::optional(5.0) : std::nullopt);
  const auto c = b.build();
  const auto g = assign_groups(c, select_active_users(c), 0.05, false);
  ASSERT_EQ(g.users.size(), 2u);
  for (const auto& u : g.users) {
    EXPECT_TRUE(u.degenerate);
    EXPECT_EQ(u.group, Group::no_trend);
  }
  EXPECT_EQ(g.degenerate, 2u);
}

TEST(Groups, MatchedReferenceClosestThenId) {
  std::vector<UserGroupAssignment> pool(4);
  const double tox[] = {10.0, 30.0, 50.0, 70.0};
  for (int i = 0; i < 4; ++i) {
    pool[i].user_id = "u" + std::to_string(3 - i);
    pool[i].mean_toxicity = tox[i];
  }
  EXPECT_EQ(matched_reference(pool, 40.0, 2), (std::vector<std::string>{"u1", "u2"}));
  EXPECT_EQ(matched_reference(pool, 62.0, 1), (std::vector<std::string>{"u0"}));
  EXPECT_THROW(matched_reference(pool, 0.0, 5), InvalidArgument);
}

TEST(Groups, JsonRoundTrip) {
  TempDir dir("groups");
  Builder b;
  Rng rng(5);
  for (int u = 0; u < 12; ++u)
    for (int i = 0; i < 55; ++i)
      b.add("u" + std::to_string(u), b.w.t0 + static_cast<Timestamp>(rng.below(190 * kDay)),
            std::clamp(40.0 + (u % 2 ? 0.0 : 1e-5) * i * kDay + rng.normal(0, 3), 0.0, 100.0));
  const auto c = b.build();
  const auto g = assign_groups(c, select_active_users(c));
  write_groups(dir / "g.json", g, c);
  EXPECT_EQ(read_groups(dir / "g.json"), g);
  std::ofstream(dir / "bad.json") << "{}";
  EXPECT_THROW(read_groups(dir / "bad.json"), FormatError);
}

TEST(WeeklyToxicity, BinsByWeekAndLeavesGapsEmpty) {
  Builder b;
  b.add("a", b.w.t0, 10.0);
  b.add("a", b.w.t0 + 6 * kDay, 30.0);
  b.add("a", b.w.t0 + 14 * kDay, 80.0);
  b.add("b", b.w.t0, 100.0);
  const auto c = b.build();
  const std::vector<std::string> users{"a"};
  const auto wk = weekly_group_toxicity(c, users);
  ASSERT_EQ(wk.size(), 27u);
  EXPECT_DOUBLE_EQ(wk[0], 20.0);
  EXPECT_TRUE(std::isnan(wk[1]));
  EXPECT_DOUBLE_EQ(wk[2], 80.0);
}

TEST(Interpolation, MatchesSegmentSearchOracle) {
  const auto w = study_window();
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng = Rng::stream(seed, fnv1a("interp"));
    const std::size_t n = 1 + rng.below(120);
    std::vector<Timestamp> ts(n);
    for (auto& t : ts) t = w.t0 + static_cast<Timestamp>(rng.below(static_cast<std::uint64_t>(w.t_end - w.t0) + 1));
    if (n > 3) ts[1] = ts[0];
    std::sort(ts.begin(), ts.end());
    Matrix e(n, 5);
    for (auto& v : e.values) v = rng.normal(0.0, 3.0);
    const auto got = interpolate_daily(ts, e, w);
    const auto want = oracle::interpolate_segment_search(ts, e, w);
    ASSERT_EQ(got.rows, 194u);
    for (std::size_t i = 0; i < got.values.size(); ++i) ASSERT_NEAR(got.values[i], want.values[i], 1e-12) << seed;
  }
}

TEST(Interpolation, SinglePostIsConstant) {
  const auto w = study_window();
  Matrix e(1, 3);
  e.values = {1.5, -2.0, 7.0};
  const std::vector<Timestamp> ts{w.t0 + 40 * kDay};
  const auto d = interpolate_daily(ts, e, w);
  for (std::size_t g = 0; g < d.rows; ++g)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(d(g, j), e(0, j));
}

TEST(Interpolation, GridEndpointsHitPosts) {
  const auto w = study_window();
  Matrix e(2, 1);
  e.values = {0.0, 10.0};
  const std::vector<Timestamp> ts{w.t0, w.t_end};
  const auto d = interpolate_daily(ts, e, w);
  EXPECT_EQ(d(0, 0), 0.0);
  EXPECT_EQ(d(193, 0), 10.0);
  EXPECT_NEAR(d(97, 0), 10.0 * 97.0 / 193.0, 1e-12);
}

TEST(Weekly, TwentySevenRowsAndTailUnused) {
  Matrix daily(194, 2);
  for (std::size_t g = 0; g < 194; ++g) {
    daily(g, 0) = static_cast<double>(g);
    daily(g, 1) = 1.0;
  }
  const auto wk = weekly_average(daily, 7, 194);
  ASSERT_EQ(wk.rows, 27u);
  EXPECT_DOUBLE_EQ(wk(0, 0), 3.0);
  EXPECT_DOUBLE_EQ(wk(26, 0), 185.0);
  Matrix changed = daily;
  for (std::size_t g = 189; g < 194; ++g) changed(g, 0) = 1e6;
  EXPECT_EQ(weekly_average(changed, 7), wk);
  EXPECT_THROW(weekly_average(daily, 7, 193), InvalidArgument);
}

TEST(GroupAverage, MatchesNaiveMean) {
  Rng rng(3);
  std::vector<Matrix> ms(37, Matrix(27, 5));
  for (auto& m : ms)
    for (auto& v : m.values) v = rng.normal(0, 10);
  std::vector<const Matrix*> ptrs;
  for (const auto& m : ms) ptrs.push_back(&m);
  const auto avg = group_average_trajectory(ptrs);
  for (std::size_t i = 0; i < avg.values.size(); ++i) {
    long double s = 0;
    for (const auto& m : ms) s += m.values[i];
    EXPECT_NEAR(avg.values[i], static_cast<double>(s / 37), 1e-12);
  }
  EXPECT_THROW(group_average_trajectory(std::span<const Matrix* const>{}), InvalidArgument);
}

TEST(Trajectories, BuildIsWorkerInvariantAndRoundTrips) {
  TempDir dir("traj");
  Builder b;
  Rng rng(8);
  for (int u = 0; u < 25; ++u)
    for (int i = 0; i < 20; ++i)
      b.add("u" + std::to_string(u), b.w.t0 + static_cast<Timestamp>(rng.below(190 * kDay)), 1.0,
            u == 7 ? std::vector<double>{} : std::vector<double>{rng.normal(), rng.normal()});
  const auto c = b.build();
  std::vector<std::string> users;
  for (int u = 0; u < 25; ++u) users.push_back("u" + std::to_string(u));
  const auto one = build_trajectories(c, *c.embeddings(), users, 1);
  EXPECT_EQ(one.users.size(), 24u);
  EXPECT_EQ(one.excluded_no_embeddings, 1u);
  EXPECT_EQ(one.find("u7"), nullptr);
  ASSERT_NE(one.find("u3"), nullptr);
  EXPECT_EQ(one.find("u3")->weekly.rows, 27u);
  EXPECT_EQ(build_trajectories(c, *c.embeddings(), users, 8), one);
  write_trajectories(dir / "t.bin", one);
  auto back = read_trajectories(dir / "t.bin");
  back.excluded_no_embeddings = one.excluded_no_embeddings;
  EXPECT_EQ(back, one);
  std::ofstream(dir / "bad.bin") << "TRJ1";
  EXPECT_THROW(read_trajectories(dir / "bad.bin"), FormatError);
}
