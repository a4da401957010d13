#include "oracles.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <map>
#include <numeric>

namespace oracle {

namespace {

double two_sided(double greater, double less) { return std::min(1.0, 2.0 * std::min(greater, less)); }

// Midranks of the pooled sample, doubled so they are integers.
std::vector<long> doubled_midranks(const std::vector<double>& pooled) {
  std::vector<std::size_t> idx(pooled.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return pooled[i] < pooled[j]; });
  std::vector<long> r(pooled.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && pooled[idx[j]] == pooled[idx[i]]) ++j;
    const long twice = static_cast<long>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = twice;
    i = j;
  }
  return r;
}

}  // namespace

double mw_exact_conditional(std::span<const double> a, std::span<const double> b, Alternative alt) {
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto r = doubled_midranks(pooled);
  const std::size_t na = a.size(), n = pooled.size();
  long obs = 0;
  for (std::size_t i = 0; i < na; ++i) obs += r[i];
  const long max_sum = std::accumulate(r.begin(), r.end(), 0L);
  // ways[k][s]: subsets of size k with doubled rank sum s.
  std::vector<std::vector<long double>> ways(na + 1, std::vector<long double>(static_cast<std::size_t>(max_sum) + 1, 0));
  ways[0][0] = 1;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = std::min(na, i + 1); k >= 1; --k)
      for (long s = max_sum; s >= r[i]; --s) ways[k][static_cast<std::size_t>(s)] += ways[k - 1][static_cast<std::size_t>(s - r[i])];
  long double total = 0, ge = 0, le = 0;
  for (long s = 0; s <= max_sum; ++s) {
    const long double w = ways[na][static_cast<std::size_t>(s)];
    total += w;
    if (s >= obs) ge += w;
    if (s <= obs) le += w;
  }
  const double pg = static_cast<double>(ge / total), pl = static_cast<double>(le / total);
  if (alt == Alternative::greater) return pg;
  if (alt == Alternative::less) return pl;
  return two_sided(pg, pl);
}

double mw_enumerate(std::span<const double> a, std::span<const double> b, Alternative alt) {
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto r = doubled_midranks(pooled);
  const std::size_t na = a.size(), n = pooled.size();
  long obs = 0;
  for (std::size_t i = 0; i < na; ++i) obs += r[i];
  double total = 0, ge = 0, le = 0;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != na) continue;
    long s = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask & (1u << i)) s += r[i];
    total += 1;
    if (s >= obs) ge += 1;
    if (s <= obs) le += 1;
  }
  if (alt == Alternative::greater) return ge / total;
  if (alt == Alternative::less) return le / total;
  return two_sided(ge / total, le / total);
}

double mw_normal_tie_corrected(std::span<const double> a, std::span<const double> b, Alternative alt) {
  double u = 0.0;
  for (double x : a)
    for (double y : b) u += x > y ? 1.0 : x == y ? 0.5 : 0.0;
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size()), n = na + nb;
  std::map<double, double> counts;
  for (double x : a) counts[x] += 1;
  for (double y : b) counts[y] += 1;
  double tie = 0.0;
  for (const auto& [v, t] : counts) tie += t * t * t - t;
  const double var = na * nb / 12.0 * ((n + 1.0) - tie / (n * (n - 1.0)));
  if (var <= 0.0) return 1.0;
  const double mu = na * nb / 2.0, sd = std::sqrt(var);
  const boost::math::normal_distribution<double> N;
  const double pg = std::min(1.0, boost::math::cdf(boost::math::complement(N, (u - mu - 0.5) / sd)));
  const double pl = std::min(1.0, boost::math::cdf(N, (u - mu + 0.5) / sd));
  if (alt == Alternative::greater) return pg;
  if (alt == Alternative::less) return pl;
  return two_sided(pg, pl);
}

toxtraj::Matrix interpolate_segment_search(std::span<const toxtraj::Timestamp> ts, const toxtraj::Matrix& emb,
                                           const toxtraj::StudyWindow& w) {
  std::map<toxtraj::Timestamp, std::pair<std::vector<double>, double>> acc;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    auto& [sum, cnt] = acc[ts[i]];
    sum.resize(emb.cols, 0.0);
    for (std::size_t j = 0; j < emb.cols; ++j) sum[j] += emb(i, j);
    cnt += 1;
  }
  std::vector<double> tau;
  std::vector<std::vector<double>> v;
  for (auto& [t, sc] : acc) {
    tau.push_back(static_cast<double>(t - w.t0) / static_cast<double>(w.t_end - w.t0));
    for (auto& s : sc.first) s /= sc.second;
    v.push_back(sc.first);
  }
  const auto G = static_cast<std::size_t>(w.n_daily_grid);
  toxtraj::Matrix out(G, emb.cols);
  for (std::size_t g = 0; g < G; ++g) {
    const double t = static_cast<double>(g) / static_cast<double>(G - 1);
    std::vector<double> row;
    if (t <= tau.front()) {
      row = v.front();
    } else if (t >= tau.back()) {
      row = v.back();
    } else {
      for (std::size_t i = 0; i + 1 < tau.size(); ++i) {
        if (tau[i] <= t && t < tau[i + 1]) {
          const double f = (t - tau[i]) / (tau[i + 1] - tau[i]);
          row.resize(emb.cols);
          for (std::size_t j = 0; j < emb.cols; ++j) row[j] = v[i][j] + f * (v[i + 1][j] - v[i][j]);
          break;
        }
      }
    }
    for (std::size_t j = 0; j < emb.cols; ++j) out(g, j) = row[j];
  }
  return out;
}

Ols ols_closed_form(std::span<const double> x, std::span<const double> y) {
  const long double n = static_cast<long double>(x.size());
  long double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += static_cast<long double>(x[i]) * x[i];
    sxy += static_cast<long double>(x[i]) * y[i];
  }
  Ols o;
  const long double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const long double icpt = (sy - slope * sx) / n;
  long double rss = 0, mx = sx / n, ssx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double e = y[i] - (icpt + slope * x[i]);
    rss += e * e;
    ssx += (x[i] - mx) * (x[i] - mx);
  }
  o.slope = static_cast<double>(slope);
  o.intercept = static_cast<double>(icpt);
  const long double se = std::sqrt(rss / (n - 2) / ssx);
  o.t = static_cast<double>(slope / se);
  const boost::math::students_t_distribution<double> T(static_cast<double>(n) - 2.0);
  o.p = 2.0 * boost::math::cdf(boost::math::complement(T, std::fabs(o.t)));
  return o;
}

int knn_cosine_brute(const toxtraj::Matrix& train, std::span<const int> labels, std::span<const double> q,
                     std::size_t k) {
  std::vector<std::pair<double, std::size_t>> sims;
  double qn = 0.0;
  for (double v : q) qn += v * v;
  qn = std::sqrt(qn);
  for (std::size_t i = 0; i < train.rows; ++i) {
    double dot = 0.0, pn = 0.0;
    for (std::size_t j = 0; j < train.cols; ++j) {
      dot += train(i, j) * q[j];
      pn += train(i, j) * train(i, j);
    }
    sims.emplace_back(dot / (std::sqrt(pn) * qn), i);
  }
  std::sort(sims.begin(), sims.end(), [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first > y.first : x.second < y.second;
  });
  std::map<int, std::pair<int, double>> votes;
  for (std::size_t i = 0; i < std::min(k, sims.size()); ++i) {
    auto& v = votes[labels[sims[i].second]];
    v.first += 1;
    v.second += sims[i].first;
  }
  int best = -1;
  std::pair<int, double> bv{-1, 0.0};
  for (const auto& [lab, v] : votes)
    if (v.first > bv.first || (v.first == bv.first && v.second > bv.second)) {
      best = lab;
      bv = v;
    }
  return best;
}

Ss permanova_ss_from_distances(const toxtraj::Matrix& a, const toxtraj::Matrix& b) {
  auto d2 = [](std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += (x[j] - y[j]) * (x[j] - y[j]);
    return s;
  };
  auto within = [&](const toxtraj::Matrix& m) {
    double s = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i)
      for (std::size_t j = i + 1; j < m.rows; ++j) s += d2(m.row(i), m.row(j));
    return s / static_cast<double>(m.rows);
  };
  double total = 0.0;
  std::vector<std::span<const double>> all;
  for (std::size_t i = 0; i < a.rows; ++i) all.push_back(a.row(i));
  for (std::size_t i = 0; i < b.rows; ++i) all.push_back(b.row(i));
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j) total += d2(all[i], all[j]);
  total /= static_cast<double>(all.size());
  Ss s;
  s.within = within(a) + within(b);
  s.between = total - s.within;
  return s;
}

}  // namespace oracle
