#include "toxtraj/trajectory.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "toxtraj/error.hpp"
#include "toxtraj/parallel.hpp"
#include "toxtraj/stats.hpp"

namespace toxtraj::trajectory {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct UserRange {
  std::string_view user_id;
  std::size_t begin, end;
};

std::vector<UserRange> user_ranges(const Corpus& corpus) {
  std::vector<UserRange> out;
  const auto& posts = corpus.posts();
  for (std::size_t i = 0; i < posts.size();) {
    std::size_t j = i;
    while (j < posts.size() && posts[j].user_id == posts[i].user_id) ++j;
    out.push_back({posts[i].user_id, i, j});
    i = j;
  }
  return out;
}

}  // namespace

std::vector<ActiveUser> select_active_users(const Corpus& corpus, std::size_t min_posts) {
  std::vector<ActiveUser> out;
  for (const auto& r : user_ranges(corpus))
    if (r.end - r.begin >= min_posts) out.push_back({std::string(r.user_id), r.end - r.begin});
  return out;  // corpus order is by user_id already
}

std::string_view to_string(Group g) {
  switch (g) {
    case Group::increasing: return "increasing";
    case Group::decreasing: return "decreasing";
    case Group::no_trend: return "no_trend";
  }
  return "no_trend";
}

Group group_from_string(std::string_view s) {
  if (s == "increasing") return Group::increasing;
  if (s == "decreasing") return Group::decreasing;
  if (s == "no_trend") return Group::no_trend;
  throw FormatError("unknown group " + std::string(s));
}

const GroupSummary& Grouping::group(std::string_view name) const {
  if (name == "increasing") return increasing;
  if (name == "decreasing") return decreasing;
  if (name == "no_trend") return no_trend;
  if (name == "increasing_ref") return increasing_ref;
  if (name == "decreasing_ref") return decreasing_ref;
  throw InvalidArgument("unknown group " + std::string(name));
}

std::vector<std::string> matched_reference(std::span<const UserGroupAssignment> candidates, double target,
                                           std::size_t n) {
  if (candidates.size() < n)
    throw InvalidArgument("matched_reference: " + std::to_string(candidates.size()) +
                          " candidates cannot supply " + std::to_string(n) + " references");
  std::vector<const UserGroupAssignment*> c;
  for (const auto& u : candidates) c.push_back(&u);
  std::sort(c.begin(), c.end(), [&](const auto* a, const auto* b) {
    const double da = std::abs(a->mean_toxicity - target), db = std::abs(b->mean_toxicity - target);
    if (da != db) return da < db;
    return a->user_id < b->user_id;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(c[i]->user_id);
  return out;
}

namespace {

GroupSummary summarize(const std::vector<UserGroupAssignment>& users, auto&& member) {
  GroupSummary s;
  double sum = 0.0;
  for (const auto& u : users)
    if (member(u)) {
      s.users.push_back(u.user_id);
      sum += u.mean_toxicity;
    }
  s.size = s.users.size();
  s.mean_toxicity = s.size ? sum / static_cast<double>(s.size) : 0.0;
  return s;
}

}  // namespace

Grouping assign_groups(const Corpus& corpus, std::span<const ActiveUser> active, double alpha, bool match_references) {
  Grouping g;
  g.alpha = alpha;
  std::unordered_map<std::string_view, UserRange> ranges;
  for (const auto& r : user_ranges(corpus)) ranges.emplace(r.user_id, r);
  const auto& posts = corpus.posts();
  for (const auto& a : active) {
    const auto it = ranges.find(a.user_id);
    if (it == ranges.end()) throw InvalidArgument("assign_groups: unknown user " + a.user_id);
    std::vector<double> x, y;
    for (std::size_t i = it->second.begin; i < it->second.end; ++i)
      if (posts[i].toxicity) {
        x.push_back(static_cast<double>(posts[i].timestamp));
        y.push_back(*posts[i].toxicity);
      }
    UserGroupAssignment u;
    u.user_id = a.user_id;
    u.post_count = it->second.end - it->second.begin;
    if (!y.empty()) u.mean_toxicity = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    const bool spread = !x.empty() && std::any_of(x.begin(), x.end(), [&](double v) { return v != x.front(); });
    if (x.size() < 3 || !spread) {
      u.degenerate = true;
      ++g.degenerate;
    } else {
      const auto fit = stats::ols_trend(x, y);
      u.slope = fit.slope;
      u.p_value = fit.p_value;
      if (stats::is_significant(fit.p_value, alpha) && fit.slope > 0.0) u.group = Group::increasing;
      else if (stats::is_significant(fit.p_value, alpha) && fit.slope < 0.0) u.group = Group::decreasing;
    }
    g.users.push_back(std::move(u));
  }
  g.increasing = summarize(g.users, [](const auto& u) { return u.group == Group::increasing; });
  g.decreasing = summarize(g.users, [](const auto& u) { return u.group == Group::decreasing; });
  g.no_trend = summarize(g.users, [](const auto& u) { return u.group == Group::no_trend; });
  if (match_references) {
    std::vector<UserGroupAssignment> pool;
    for (const auto& u : g.users)
      if (u.group == Group::no_trend) pool.push_back(u);
    const auto inc = matched_reference(pool, g.increasing.mean_toxicity, g.increasing.size);
    const auto dec = matched_reference(pool, g.decreasing.mean_toxicity, g.decreasing.size);
    const std::unordered_set<std::string> inc_set(inc.begin(), inc.end()), dec_set(dec.begin(), dec.end());
    for (auto& u : g.users) {
      u.increasing_ref = inc_set.contains(u.user_id);
      u.decreasing_ref = dec_set.contains(u.user_id);
      if (u.increasing_ref && u.decreasing_ref) ++g.reference_overlap;
    }
    g.increasing_ref = summarize(g.users, [](const auto& u) { return u.increasing_ref; });
    g.decreasing_ref = summarize(g.users, [](const auto& u) { return u.decreasing_ref; });
  }
  return g;
}

std::vector<double> weekly_group_toxicity(const Corpus& corpus, std::span<const std::string> users) {
  const auto& w = corpus.window();
  const auto weeks = static_cast<std::size_t>(std::max(0, w.n_weeks()));
  std::vector<double> sum(weeks, 0.0), count(weeks, 0.0);
  const std::unordered_set<std::string_view> members(users.begin(), users.end());
  const Timestamp week_seconds = static_cast<Timestamp>(w.week_len_days) * 86400;
  for (const auto& p : corpus.posts()) {
    if (!p.toxicity || !members.contains(p.user_id) || p.timestamp < w.t0) continue;
    const auto wk = static_cast<std::size_t>((p.timestamp - w.t0) / week_seconds);
    if (wk >= weeks) continue;
    sum[wk] += *p.toxicity;
    count[wk] += 1.0;
  }
  std::vector<double> out(weeks, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < weeks; ++i)
    if (count[i] > 0.0) out[i] = sum[i] / count[i];
  return out;
}

// ---------------------------------------------------------------------------

Matrix interpolate_daily(std::span<const Timestamp> timestamps, const Matrix& embeddings, const StudyWindow& window) {
  if (timestamps.empty()) throw InvalidArgument("interpolate_daily: user has no posts");
  if (timestamps.size() != embeddings.rows) throw InvalidArgument("interpolate_daily: one embedding per post expected");
  if (window.n_daily_grid < 2) throw InvalidArgument("interpolate_daily: grid needs at least 2 points");
  const std::size_t k = embeddings.cols;

  std::vector<std::size_t> order(timestamps.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return timestamps[a] < timestamps[b]; });

  // Collapse same-second posts to their coordinate mean.
  std::vector<double> tau;
  Matrix knots(0, k);
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::vector<double> acc(k, 0.0);
    while (j < order.size() && timestamps[order[j]] == timestamps[order[i]]) {
      const auto r = embeddings.row(order[j]);
      for (std::size_t c = 0; c < k; ++c) acc[c] += r[c];
      ++j;
    }
    const double cnt = static_cast<double>(j - i);
    if (j - i > 1)
      for (auto& v : acc) v /= cnt;
    tau.push_back(window.normalized_time(timestamps[order[i]]));
    knots.values.insert(knots.values.end(), acc.begin(), acc.end());
    ++knots.rows;
    i = j;
  }

  const auto G = static_cast<std::size_t>(window.n_daily_grid);
  Matrix out(G, k);
  for (std::size_t g = 0; g < G; ++g) {
    const double t = window.grid_time(static_cast<int>(g));
    auto dst = out.row(g);
    if (t <= tau.front()) {
      std::copy_n(knots.row(0).begin(), k, dst.begin());
      continue;
    }
    if (t >= tau.back()) {
      std::copy_n(knots.row(knots.rows - 1).begin(), k, dst.begin());
      continue;
    }
    const auto hi = static_cast<std::size_t>(std::upper_bound(tau.begin(), tau.end(), t) - tau.begin());
    const std::size_t lo = hi - 1;
    const double w = (t - tau[lo]) / (tau[hi] - tau[lo]);
    const auto a = knots.row(lo), b = knots.row(hi);
    for (std::size_t c = 0; c < k; ++c) dst[c] = (1.0 - w) * a[c] + w * b[c];
  }
  return out;
}

Matrix weekly_average(const Matrix& daily, int week_len_days, std::optional<std::size_t> expected_rows) {
  if (week_len_days < 1) throw InvalidArgument("weekly_average: week length must be positive");
  if (expected_rows && daily.rows != *expected_rows)
    throw InvalidArgument("weekly_average: expected " + std::to_string(*expected_rows) + " daily rows, got " +
                          std::to_string(daily.rows));
  const auto len = static_cast<std::size_t>(week_len_days);
  const std::size_t weeks = daily.rows / len;
  Matrix out(weeks, daily.cols);
  for (std::size_t w = 0; w < weeks; ++w)
    for (std::size_t c = 0; c < daily.cols; ++c) {
      double s = 0.0;
      for (std::size_t d = w * len; d < (w + 1) * len; ++d) s += daily(d, c);
      out(w, c) = s / static_cast<double>(len);
    }
  return out;
}

namespace {

double pairwise_sum(std::span<const Matrix* const> m, std::size_t idx) {
  if (m.size() <= 8) {
    double s = 0.0;
    for (const Matrix* x : m) s += x->values[idx];
    return s;
  }
  const std::size_t half = m.size() / 2;
  return pairwise_sum(m.first(half), idx) + pairwise_sum(m.subspan(half), idx);
}

}  // namespace

Matrix group_average_trajectory(std::span<const Matrix* const> members) {
  if (members.empty()) throw InvalidArgument("group_average_trajectory: empty group");
  const Matrix& first = *members.front();
  for (const Matrix* m : members)
    if (m->rows != first.rows || m->cols != first.cols)
      throw InvalidArgument("group_average_trajectory: trajectory shapes differ");
  Matrix out(first.rows, first.cols);
  const double n = static_cast<double>(members.size());
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] = pairwise_sum(members, i) / n;
  return out;
}

const UserTrajectory* TrajectorySet::find(std::string_view user_id) const {
  const auto it = std::lower_bound(users.begin(), users.end(), user_id,
                                   [](const UserTrajectory& u, std::string_view id) { return u.user_id < id; });
  return it != users.end() && it->user_id == user_id ? &*it : nullptr;
}

TrajectorySet build_trajectories(const Corpus& corpus, const EmbeddingMatrix& reduced,
                                 std::span<const std::string> users, unsigned workers) {
  std::unordered_map<std::string_view, std::size_t> row_of;
  for (std::size_t i = 0; i < reduced.row_ids.size(); ++i) row_of.emplace(reduced.row_ids[i], i);
  std::unordered_map<std::string_view, UserRange> ranges;
  for (const auto& r : user_ranges(corpus)) ranges.emplace(r.user_id, r);

  std::vector<std::string> ids(users.begin(), users.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  const auto& posts = corpus.posts();
  const auto& window = corpus.window();
  std::vector<std::optional<UserTrajectory>> slots(ids.size());
  parallel_for(ids.size(), workers, [&](std::size_t u) {
    const auto it = ranges.find(ids[u]);
    if (it == ranges.end()) return;
    std::vector<Timestamp> ts;
    Matrix emb(0, reduced.d());
    for (std::size_t i = it->second.begin; i < it->second.end; ++i) {
      const auto r = row_of.find(posts[i].post_id);
      if (r == row_of.end()) continue;
      ts.push_back(posts[i].timestamp);
      const auto row = reduced.row(r->second);
      emb.values.insert(emb.values.end(), row.begin(), row.end());
      ++emb.rows;
    }
    if (ts.empty()) return;
    UserTrajectory t;
    t.user_id = ids[u];
    t.daily = interpolate_daily(ts, emb, window);
    t.weekly = weekly_average(t.daily, window.week_len_days);
    slots[u] = std::move(t);
  });
  TrajectorySet set;
  set.week_len_days = window.week_len_days;
  for (auto& s : slots) {
    if (s) set.users.push_back(std::move(*s));
    else ++set.excluded_no_embeddings;
  }
  return set;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<char, 4> kTrajMagic{'T', 'R', 'J', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in, const fs::path& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError(path.string() + ": truncated trajectory file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

double get_f64(std::istream& in, const fs::path& path) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw FormatError(path.string() + ": truncated trajectory file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace

void write_trajectories(const fs::path& path, const TrajectorySet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::size_t T = set.users.empty() ? 0 : set.users.front().daily.rows;
  const std::size_t k = set.users.empty() ? 0 : set.users.front().daily.cols;
  out.write(kTrajMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(set.users.size()));
  put_u32(out, static_cast<std::uint32_t>(T));
  put_u32(out, static_cast<std::uint32_t>(k));
  for (const auto& u : set.users) {
    if (u.daily.rows != T || u.daily.cols != k) throw InvalidArgument("write_trajectories: shapes differ");
    put_u32(out, static_cast<std::uint32_t>(u.user_id.size()));
    out.write(u.user_id.data(), static_cast<std::streamsize>(u.user_id.size()));
    for (double v : u.daily.values) put_f64(out, v);
  }
  if (!out) throw FormatError("write failed: " + path.string());
}

TrajectorySet read_trajectories(const fs::path& path, int week_len_days) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), 4) || magic != kTrajMagic) throw FormatError(path.string() + ": not a TRJ1 file");
  const std::uint32_t n = get_u32(in, path), T = get_u32(in, path), k = get_u32(in, path);
  TrajectorySet set;
  set.week_len_days = week_len_days;
  for (std::uint32_t i = 0; i < n; ++i) {
    UserTrajectory u;
    const std::uint32_t len = get_u32(in, path);
    u.user_id.resize(len);
    if (!in.read(u.user_id.data(), len)) throw FormatError(path.string() + ": truncated trajectory file");
    u.daily = Matrix(T, k);
    for (auto& v : u.daily.values) {
      v = get_f64(in, path);
      if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite trajectory value");
    }
    u.weekly = weekly_average(u.daily, week_len_days);
    if (!set.users.empty() && !(set.users.back().user_id < u.user_id))
      throw FormatError(path.string() + ": user ids must be strictly ascending");
    set.users.push_back(std::move(u));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  return set;
}

namespace {

json nan_to_null(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(std::isfinite(x) ? json(x) : json(nullptr));
  return a;
}

GroupSummary summary_from(const json& j) {
  GroupSummary s;
  s.size = j.at("size").get<std::size_t>();
  s.mean_toxicity = j.at("mean_toxicity").get<double>();
  s.users = j.at("users").get<std::vector<std::string>>();
  return s;
}

}  // namespace

void write_groups(const fs::path& path, const Grouping& g, const Corpus& corpus) {
  json users = json::array();
  for (const auto& u : g.users)
    users.push_back({{"user_id", u.user_id},
                     {"post_count", u.post_count},
                     {"group", to_string(u.group)},
                     {"slope", u.slope},
                     {"p_value", u.p_value},
                     {"mean_toxicity", u.mean_toxicity},
                     {"degenerate", u.degenerate},
                     {"increasing_ref", u.increasing_ref},
                     {"decreasing_ref", u.decreasing_ref}});
  json groups = json::object();
  json weekly = json::object();
  for (const char* name : {"increasing", "decreasing", "no_trend", "increasing_ref", "decreasing_ref"}) {
    const auto& s = g.group(name);
    groups[name] = {{"size", s.size}, {"mean_toxicity", s.mean_toxicity}, {"users", s.users}};
    weekly[name] = nan_to_null(weekly_group_toxicity(corpus, s.users));
  }
  const json doc = {{"alpha", g.alpha},
                    {"min_posts", g.min_posts},
                    {"toxicity_scale", "0-100"},
                    {"active_users", g.users.size()},
                    {"degenerate", g.degenerate},
                    {"reference_overlap", g.reference_overlap},
                    {"groups", groups},
                    {"weekly_toxicity", weekly},
                    {"users", users}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw FormatError("write failed: " + path.string());
}

Grouping read_groups(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  Grouping g;
  try {
    const json doc = json::parse(in);
    g.alpha = doc.at("alpha").get<double>();
    g.min_posts = doc.at("min_posts").get<std::size_t>();
    g.degenerate = doc.at("degenerate").get<std::size_t>();
    g.reference_overlap = doc.at("reference_overlap").get<std::size_t>();
    const auto& groups = doc.at("groups");
    g.increasing = summary_from(groups.at("increasing"));
    g.decreasing = summary_from(groups.at("decreasing"));
    g.no_trend = summary_from(groups.at("no_trend"));
    g.increasing_ref = summary_from(groups.at("increasing_ref"));
    g.decreasing_ref = summary_from(groups.at("decreasing_ref"));
    for (const auto& j : doc.at("users")) {
      UserGroupAssignment u;
      u.user_id = j.at("user_id").get<std::string>();
      u.post_count = j.at("post_count").get<std::size_t>();
      u.group = group_from_string(j.at("group").get<std::string>());
      u.slope = j.at("slope").get<double>();
      u.p_value = j.at("p_value").get<double>();
      u.mean_toxicity = j.at("mean_toxicity").get<double>();
      u.degenerate = j.at("degenerate").get<bool>();
      u.increasing_ref = j.at("increasing_ref").get<bool>();
      u.decreasing_ref = j.at("decreasing_ref").get<bool>();
      g.users.push_back(std::move(u));
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return g;
}

}  // namespace toxtraj::trajectory
