#include "toxtraj/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "toxtraj/error.hpp"
#include "toxtraj/kdtree.hpp"
#include "toxtraj/rng.hpp"

namespace toxtraj::synth {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

std::size_t total_subs(const HierarchyConfig& c) {
  std::size_t n = 0;
  for (const auto& p : c.parents) n += p.random_labels ? p.random_labels : p.sub_centers.size();
  return n;
}

}  // namespace

void validate(const HierarchyConfig& config) {
  if (config.dim == 0) throw InvalidArgument("synth: dim must be positive");
  if (config.parents.empty()) throw InvalidArgument("synth: hierarchy needs at least one parent");
  struct C {
    const std::vector<double>* c;
    double sigma;
  };
  std::vector<C> centres;
  for (const auto& p : config.parents) {
    if (p.center.size() != config.dim) throw InvalidArgument("synth: parent centre has the wrong dimension");
    if (p.sub_centers.empty()) throw InvalidArgument("synth: parent needs at least one sub-centre");
    if (!(p.sigma >= 0.0) || !(p.halo_sigma >= 0.0)) throw InvalidArgument("synth: sigma must be non-negative");
    for (const auto& s : p.sub_centers) {
      if (s.size() != config.dim) throw InvalidArgument("synth: sub-centre has the wrong dimension");
      centres.push_back({&s, p.sigma});
    }
  }
  if (!config.separable) return;
  for (std::size_t i = 0; i < centres.size(); ++i)
    for (std::size_t j = i + 1; j < centres.size(); ++j) {
      const double d = std::sqrt(squared_distance(*centres[i].c, *centres[j].c));
      const double need = config.separation_sigmas * std::max(centres[i].sigma, centres[j].sigma);
      if (d < need)
        throw InvalidArgument("synth: config marked separable but sub-centres " + std::to_string(i) + " and " +
                              std::to_string(j) + " are " + std::to_string(d) + " apart (need " +
                              std::to_string(need) + ")");
    }
}

Blobs generate_hierarchical_blobs(const HierarchyConfig& config, std::uint64_t seed) {
  validate(config);
  Blobs out;
  out.points = Matrix(0, config.dim);
  auto emit = [&](const std::vector<double>& centre, double sigma, Rng& rng, int l1, int l2) {
    for (std::size_t j = 0; j < config.dim; ++j) out.points.values.push_back(f32(centre[j] + sigma * rng.normal()));
    ++out.points.rows;
    out.level1.push_back(l1);
    out.level2.push_back(l2);
  };
  int sub_base = 0;
  for (std::size_t p = 0; p < config.parents.size(); ++p) {
    const auto& parent = config.parents[p];
    for (std::size_t s = 0; s < parent.sub_centers.size(); ++s) {
      Rng rng = Rng::stream(seed, fnv1a("blob"), p, s);
      Rng labels = Rng::stream(seed, fnv1a("blob-labels"), p, s);
      for (std::size_t i = 0; i < parent.points_per_sub; ++i) {
        const int l2 = parent.random_labels ? sub_base + static_cast<int>(labels.below(parent.random_labels))
                                            : sub_base + static_cast<int>(s);
        emit(parent.sub_centers[s], parent.sigma, rng, static_cast<int>(p), l2);
      }
    }
    Rng halo = Rng::stream(seed, fnv1a("halo"), p);
    for (std::size_t i = 0; i < parent.halo_points; ++i) emit(parent.center, parent.halo_sigma, halo, static_cast<int>(p), -1);
    sub_base += static_cast<int>(parent.random_labels ? parent.random_labels : parent.sub_centers.size());
  }
  return out;
}

namespace {

std::vector<std::vector<double>> triangle(double side, std::size_t dim) {
  const double r = side / std::sqrt(3.0);  // circumradius
  std::vector<std::vector<double>> c(3, std::vector<double>(dim, 0.0));
  for (int p = 0; p < 3; ++p) {
    const double a = 2.0 * std::numbers::pi * p / 3.0;
    c[static_cast<std::size_t>(p)][0] = r * std::cos(a);
    c[static_cast<std::size_t>(p)][1] = r * std::sin(a);
  }
  return c;
}

}  // namespace

HierarchyConfig three_by_two(double side, double offset, double sigma, std::size_t per_sub, double halo_sigma,
                             std::size_t halo_points) {
  HierarchyConfig h;
  h.dim = 5;
  h.separable = true;
  h.separation_sigmas = 2.0 * offset / sigma;
  const auto centres = triangle(side, h.dim);
  for (std::size_t p = 0; p < 3; ++p) {
    ParentBlob b;
    b.center = centres[p];
    for (double sgn : {-1.0, 1.0}) {
      auto s = centres[p];
      s[2 + p] += sgn * offset;
      b.sub_centers.push_back(s);
    }
    b.sigma = sigma;
    b.points_per_sub = per_sub;
    b.halo_sigma = halo_sigma;
    b.halo_points = halo_points;
    h.parents.push_back(std::move(b));
  }
  return h;
}

HierarchyConfig null_split(double side, std::size_t per_parent, double parent_sigma) {
  HierarchyConfig h;
  h.dim = 5;
  h.separable = false;
  const auto centres = triangle(side, h.dim);
  for (std::size_t p = 0; p < 3; ++p) {
    ParentBlob b;
    b.center = centres[p];
    b.sub_centers = {centres[p]};
    b.sigma = parent_sigma;
    b.points_per_sub = per_parent;
    b.random_labels = 2;
    h.parents.push_back(std::move(b));
  }
  return h;
}

// ---------------------------------------------------------------------------

void validate(const ScenarioConfig& c) {
  validate(c.hierarchy);
  if (c.n_users == 0) throw InvalidArgument("synth: n_users must be positive");
  if (c.posts_min == 0 || c.posts_max < c.posts_min) throw InvalidArgument("synth: bad posts-per-user range");
  if (c.window.t_end <= c.window.t0) throw InvalidArgument("synth: empty window");
  const auto& m = c.trend_mix;
  if (m.increasing < 0 || m.decreasing < 0 || m.flat < 0 || std::abs(m.increasing + m.decreasing + m.flat - 1.0) > 1e-9)
    throw InvalidArgument("synth: trend fractions must be non-negative and sum to 1");
  if (m.slope_max < m.slope_min || m.base_max < m.base_min || m.noise_max < m.noise_min || m.noise_min < 0)
    throw InvalidArgument("synth: bad trend ranges");
  if (!(c.halo_fraction >= 0.0 && c.halo_fraction <= 1.0)) throw InvalidArgument("synth: halo_fraction must lie in [0, 1]");
  if (c.ambient_dim != 0 && c.ambient_dim < c.hierarchy.dim) throw InvalidArgument("synth: ambient_dim below hierarchy dim");
  if (c.divergence) {
    const auto n = static_cast<int>(total_subs(c.hierarchy));
    const auto& d = *c.divergence;
    if (d.from_topic < 0 || d.from_topic >= n || d.to_topic < 0 || d.to_topic >= n)
      throw InvalidArgument("synth: divergence topics out of range");
    if (!(d.switch_fraction >= 0.0 && d.switch_fraction <= 1.0) || !(d.focus >= 0.0 && d.focus <= 1.0))
      throw InvalidArgument("synth: divergence fractions must lie in [0, 1]");
  }
}

namespace {

struct Topic {
  const ParentBlob* parent;
  int level1;
  const std::vector<double>* centre;
};

Matrix orthonormal_basis(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, fnv1a("basis"));
  Matrix q(rows, cols);
  for (std::size_t c = 0; c < cols; ++c) {
    std::vector<double> v(rows);
    for (auto& x : v) x = rng.normal();
    for (std::size_t o = 0; o < c; ++o) {
      double dot = 0.0;
      for (std::size_t r = 0; r < rows; ++r) dot += v[r] * q(r, o);
      for (std::size_t r = 0; r < rows; ++r) v[r] -= dot * q(r, o);
    }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (std::size_t r = 0; r < rows; ++r) q(r, c) = v[r] / n;
  }
  return q;
}

}  // namespace

SynthCorpus generate_user_streams(const ScenarioConfig& c) {
  validate(c);
  const auto& h = c.hierarchy;
  std::vector<Topic> topics;
  for (std::size_t p = 0; p < h.parents.size(); ++p)
    for (const auto& s : h.parents[p].sub_centers) topics.push_back({&h.parents[p], static_cast<int>(p), &s});

  SynthCorpus out;
  const std::size_t out_dim = c.ambient_dim ? c.ambient_dim : h.dim;
  out.embeddings.values = Matrix(0, out_dim);
  if (c.ambient_dim) out.basis = orthonormal_basis(c.ambient_dim, h.dim, c.seed);

  // Planted classes: exact counts, shuffled over users.
  const auto n_inc = static_cast<std::size_t>(std::llround(c.trend_mix.increasing * static_cast<double>(c.n_users)));
  const auto n_dec = std::min(c.n_users - n_inc,
                              static_cast<std::size_t>(std::llround(c.trend_mix.decreasing * static_cast<double>(c.n_users))));
  std::vector<PlantedTrend> classes(c.n_users, PlantedTrend::flat);
  std::fill_n(classes.begin(), n_inc, PlantedTrend::increasing);
  std::fill_n(classes.begin() + static_cast<std::ptrdiff_t>(n_inc), n_dec, PlantedTrend::decreasing);
  {
    Rng rng = Rng::stream(c.seed, fnv1a("classes"));
    shuffle(rng, classes);
  }

  const auto& w = c.window;
  const auto switch_time = static_cast<Timestamp>(
      c.divergence ? static_cast<double>(w.t0) + c.divergence->switch_fraction * static_cast<double>(w.t_end - w.t0) : 0.0);
  char buf[64];
  for (std::size_t u = 0; u < c.n_users; ++u) {
    Rng rng = Rng::stream(c.seed, fnv1a("user"), u);
    UserTruth t;
    std::snprintf(buf, sizeof buf, "user%05zu", u);
    t.user_id = buf;
    t.trend = classes[u];
    const auto& m = c.trend_mix;
    t.base = rng.uniform(m.base_min, m.base_max);
    t.noise_sd = rng.uniform(m.noise_min, m.noise_max);
    const double mag = rng.uniform(m.slope_min, m.slope_max);
    t.slope_per_day = t.trend == PlantedTrend::increasing ? mag : t.trend == PlantedTrend::decreasing ? -mag : 0.0;
    t.diverging = c.divergence && t.trend == PlantedTrend::increasing;

    const std::size_t n_posts = c.posts_min + rng.below(c.posts_max - c.posts_min + 1);
    std::vector<Timestamp> ts(n_posts);
    for (auto& s : ts) s = w.t0 + static_cast<Timestamp>(rng.below(static_cast<std::uint64_t>(w.t_end - w.t0) + 1));
    std::sort(ts.begin(), ts.end());
    std::vector<double> x5(h.dim);
    for (std::size_t i = 0; i < n_posts; ++i) {
      PostRecord p;
      std::snprintf(buf, sizeof buf, "user%05zu_p%05zu", u, i);
      p.post_id = buf;
      p.user_id = t.user_id;
      p.timestamp = ts[i];
      const double days = static_cast<double>(ts[i] - w.t0) / 86400.0;
      const double noise = t.noise_sd > 0.0 ? rng.normal(0.0, t.noise_sd) : 0.0;
      p.toxicity = std::clamp(t.base + t.slope_per_day * days + noise, 0.0, 100.0);

      std::size_t topic = rng.below(topics.size());
      if (c.divergence && rng.uniform() < c.divergence->focus) {
        const bool after = t.diverging && ts[i] >= switch_time;
        topic = static_cast<std::size_t>(after ? c.divergence->to_topic : c.divergence->from_topic);
      }
      const Topic& tp = topics[topic];
      const bool halo = tp.parent->halo_points > 0 && tp.parent->halo_sigma > 0.0 && rng.uniform() < c.halo_fraction;
      const auto& centre = halo ? tp.parent->center : *tp.centre;
      const double sigma = halo ? tp.parent->halo_sigma : tp.parent->sigma;
      for (std::size_t j = 0; j < h.dim; ++j) x5[j] = centre[j] + sigma * rng.normal();
      if (c.ambient_dim) {
        for (std::size_t r = 0; r < c.ambient_dim; ++r) {
          double v = 0.0;
          for (std::size_t j = 0; j < h.dim; ++j) v += out.basis(r, j) * x5[j];
          out.embeddings.values.values.push_back(f32(v + c.ambient_noise * rng.normal()));
        }
      } else {
        for (double v : x5) out.embeddings.values.values.push_back(f32(v));
      }
      ++out.embeddings.values.rows;
      out.embeddings.row_ids.push_back(p.post_id);
      p.embedding_row = out.posts.size();
      out.post_level1.push_back(tp.level1);
      out.post_level2.push_back(halo ? -1 : static_cast<int>(topic));
      out.posts.push_back(std::move(p));
    }
    out.users.push_back(std::move(t));
  }
  return out;
}

std::pair<Matrix, Matrix> generate_null_pair(std::size_t n_per_group, std::size_t T, std::size_t dim,
                                             std::uint64_t seed) {
  if (n_per_group < 2) throw InvalidArgument("generate_null_pair: need at least 2 per group");
  Matrix a(n_per_group, T * dim), b(n_per_group, T * dim);
  for (std::size_t i = 0; i < n_per_group; ++i) {
    Rng ra = Rng::stream(seed, fnv1a("null-a"), i);
    Rng rb = Rng::stream(seed, fnv1a("null-b"), i);
    for (auto& v : a.row(i)) v = ra.normal();
    for (auto& v : b.row(i)) v = rb.normal();
  }
  return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------

namespace {

json hierarchy_json(const HierarchyConfig& h) {
  json parents = json::array();
  for (const auto& p : h.parents)
    parents.push_back({{"center", p.center},
                       {"sub_centers", p.sub_centers},
                       {"sigma", p.sigma},
                       {"points_per_sub", p.points_per_sub},
                       {"halo_sigma", p.halo_sigma},
                       {"halo_points", p.halo_points},
                       {"random_labels", p.random_labels}});
  return {{"dim", h.dim}, {"separable", h.separable}, {"separation_sigmas", h.separation_sigmas}, {"parents", parents}};
}

HierarchyConfig hierarchy_from(const json& j) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "three_by_two") return three_by_two();
    if (name == "null_split") return null_split();
    throw FormatError("unknown hierarchy preset " + name);
  }
  HierarchyConfig h;
  h.dim = j.value("dim", h.dim);
  h.separable = j.value("separable", h.separable);
  h.separation_sigmas = j.value("separation_sigmas", h.separation_sigmas);
  for (const auto& p : j.at("parents")) {
    ParentBlob b;
    b.center = p.at("center").get<std::vector<double>>();
    b.sub_centers = p.at("sub_centers").get<std::vector<std::vector<double>>>();
    b.sigma = p.value("sigma", b.sigma);
    b.points_per_sub = p.value("points_per_sub", b.points_per_sub);
    b.halo_sigma = p.value("halo_sigma", b.halo_sigma);
    b.halo_points = p.value("halo_points", b.halo_points);
    b.random_labels = p.value("random_labels", b.random_labels);
    h.parents.push_back(std::move(b));
  }
  return h;
}

std::string_view trend_name(PlantedTrend t) {
  switch (t) {
    case PlantedTrend::increasing: return "increasing";
    case PlantedTrend::decreasing: return "decreasing";
    case PlantedTrend::flat: return "flat";
  }
  return "flat";
}

}  // namespace

ScenarioConfig read_scenario(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  ScenarioConfig c;
  try {
    const json j = json::parse(in);
    c.n_users = j.value("n_users", c.n_users);
    c.posts_min = j.value("posts_min", c.posts_min);
    c.posts_max = j.value("posts_max", c.posts_max);
    StudyWindowConfig wc;
    if (j.contains("t0")) wc.t0 = parse_iso8601(j.at("t0").get<std::string>());
    if (j.contains("t_end")) wc.t_end = parse_iso8601(j.at("t_end").get<std::string>());
    wc.n_daily_grid = j.value("n_daily_grid", wc.n_daily_grid);
    wc.week_len_days = j.value("week_len_days", wc.week_len_days);
    c.window = study_window(wc);
    if (j.contains("hierarchy")) c.hierarchy = hierarchy_from(j.at("hierarchy"));
    if (j.contains("trend_mix")) {
      const auto& t = j.at("trend_mix");
      auto& m = c.trend_mix;
      m.increasing = t.value("increasing", m.increasing);
      m.decreasing = t.value("decreasing", m.decreasing);
      m.flat = t.value("flat", m.flat);
      m.slope_min = t.value("slope_min", m.slope_min);
      m.slope_max = t.value("slope_max", m.slope_max);
      m.base_min = t.value("base_min", m.base_min);
      m.base_max = t.value("base_max", m.base_max);
      m.noise_min = t.value("noise_min", m.noise_min);
      m.noise_max = t.value("noise_max", m.noise_max);
    }
    if (j.contains("divergence") && !j.at("divergence").is_null()) {
      const auto& d = j.at("divergence");
      Divergence dv;
      dv.from_topic = d.value("from_topic", dv.from_topic);
      dv.to_topic = d.value("to_topic", dv.to_topic);
      dv.switch_fraction = d.value("switch_fraction", dv.switch_fraction);
      dv.focus = d.value("focus", dv.focus);
      c.divergence = dv;
    }
    c.halo_fraction = j.value("halo_fraction", c.halo_fraction);
    c.ambient_dim = j.value("ambient_dim", c.ambient_dim);
    c.ambient_noise = j.value("ambient_noise", c.ambient_noise);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  validate(c);
  return c;
}

void write_scenario(const fs::path& path, const ScenarioConfig& c) {
  json j = {{"n_users", c.n_users},
            {"posts_min", c.posts_min},
            {"posts_max", c.posts_max},
            {"t0", format_iso8601(c.window.t0)},
            {"t_end", format_iso8601(c.window.t_end)},
            {"n_daily_grid", c.window.n_daily_grid},
            {"week_len_days", c.window.week_len_days},
            {"hierarchy", hierarchy_json(c.hierarchy)},
            {"trend_mix",
             {{"increasing", c.trend_mix.increasing},
              {"decreasing", c.trend_mix.decreasing},
              {"flat", c.trend_mix.flat},
              {"slope_min", c.trend_mix.slope_min},
              {"slope_max", c.trend_mix.slope_max},
              {"base_min", c.trend_mix.base_min},
              {"base_max", c.trend_mix.base_max},
              {"noise_min", c.trend_mix.noise_min},
              {"noise_max", c.trend_mix.noise_max}}},
            {"halo_fraction", c.halo_fraction},
            {"ambient_dim", c.ambient_dim},
            {"ambient_noise", c.ambient_noise},
            {"seed", c.seed}};
  if (c.divergence)
    j["divergence"] = {{"from_topic", c.divergence->from_topic},
                       {"to_topic", c.divergence->to_topic},
                       {"switch_fraction", c.divergence->switch_fraction},
                       {"focus", c.divergence->focus}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

void write_synth(const fs::path& dir, const SynthCorpus& corpus, const ScenarioConfig& config) {
  fs::create_directories(dir);
  std::vector<PostRecord> posts = corpus.posts;
  for (auto& p : posts) p.embedding_row.reset();
  write_posts(dir / "posts.jsonl", posts);
  write_embeddings(dir / "embeddings.emb", corpus.embeddings);
  json users = json::array();
  for (const auto& u : corpus.users)
    users.push_back({{"user_id", u.user_id},
                     {"trend", trend_name(u.trend)},
                     {"slope_per_day", u.slope_per_day},
                     {"base", u.base},
                     {"noise_sd", u.noise_sd},
                     {"diverging", u.diverging}});
  json truth = {{"users", users}, {"post_level1", corpus.post_level1}, {"post_level2", corpus.post_level2}};
  if (config.divergence) {
    const auto& w = config.window;
    const double switch_days = config.divergence->switch_fraction * static_cast<double>(w.t_end - w.t0) / 86400.0;
    truth["switch_week"] = static_cast<int>(std::floor(switch_days / w.week_len_days));
    truth["from_topic"] = config.divergence->from_topic;
    truth["to_topic"] = config.divergence->to_topic;
  }
  std::ofstream out(dir / "truth.json");
  if (!out) throw FormatError("cannot write " + (dir / "truth.json").string());
  out << truth.dump(1) << '\n';
  write_scenario(dir / "scenario.json", config);
}

}  // namespace toxtraj::synth
