#include "toxtraj/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <vector>

namespace toxtraj::stats {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }
double normal_sf(double z) { return 0.5 * std::erfc(z / std::numbers::sqrt2); }

namespace {

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("incomplete beta: shape parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double df) {
  if (!(df > 0.0)) throw InvalidArgument("student t: degrees of freedom must be positive");
  if (std::isinf(t)) return 0.0;
  const double t2 = t * t;
  // P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)
  return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t2));
}

double student_t_cdf(double t, double df) {
  const double tail = 0.5 * student_t_two_sided(t, df);
  return t > 0.0 ? 1.0 - tail : tail;
}

namespace {

double student_t_pdf(double t, double df) {
  const double logc = std::lgamma(0.5 * (df + 1.0)) - std::lgamma(0.5 * df) - 0.5 * std::log(df * std::numbers::pi);
  return std::exp(logc - 0.5 * (df + 1.0) * std::log1p(t * t / df));
}

}  // namespace

double student_t_quantile(double p, double df) {
  if (!(p > 0.0 && p < 1.0)) throw InvalidArgument("student t quantile: p must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  // Bracket, then Newton steps safeguarded by bisection.
  double lo = -1.0, hi = 1.0;
  while (student_t_cdf(lo, df) > p) lo *= 2.0;
  while (student_t_cdf(hi, df) < p) hi *= 2.0;
  double t = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = student_t_cdf(t, df) - p;
    if (f == 0.0) break;
    if (f > 0.0) hi = t; else lo = t;
    double next = t - f / student_t_pdf(t, df);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - t) <= 1e-15 * std::max(1.0, std::abs(t))) {
      t = next;
      break;
    }
    t = next;
  }
  return t;
}

// ---------------------------------------------------------------------------

TrendFit ols_trend(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("ols_trend: x and y differ in length");
  const std::size_t n = x.size();
  if (n < 3) throw InvalidArgument("ols_trend: need at least 3 observations");
  const double nd = static_cast<double>(n);
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / nd;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / nd;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw InvalidArgument("ols_trend: regressor is constant");

  TrendFit fit;
  fit.n = n;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  double rss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = (y[i] - my) - fit.slope * (x[i] - mx);
    rss += r * r;
  }
  // Residual energy at rounding level relative to the response's spread
  // counts as an exact fit.
  const double scale = std::max(syy, std::numeric_limits<double>::min());
  if (syy == 0.0 || rss <= 1e-24 * scale) {
    fit.perfect_fit = true;
    fit.stderr_slope = 0.0;
    if (fit.slope == 0.0 || syy == 0.0) {
      fit.slope = syy == 0.0 ? 0.0 : fit.slope;
      fit.t_stat = 0.0;
      fit.p_value = 1.0;
    } else {
      fit.t_stat = std::copysign(std::numeric_limits<double>::infinity(), fit.slope);
      fit.p_value = 0.0;
    }
    return fit;
  }
  const double s2 = rss / (nd - 2.0);
  fit.stderr_slope = std::sqrt(s2 / sxx);
  fit.t_stat = fit.slope / fit.stderr_slope;
  fit.p_value = std::clamp(student_t_two_sided(fit.t_stat, nd - 2.0), 0.0, 1.0);
  return fit;
}

// ---------------------------------------------------------------------------

namespace {

// Counts of U = 0..m*n over all C(m+n, m) arrangements, via
// f(m, n, u) = f(m-1, n, u-n) + f(m, n-1, u).
std::vector<double> exact_u_counts(std::size_t m, std::size_t n) {
  // table[j] holds the distribution for (i, j) while iterating i upward.
  std::vector<std::vector<double>> prev(n + 1), cur(n + 1);
  for (std::size_t j = 0; j <= n; ++j) prev[j] = {1.0};  // i = 0: U is always 0
  for (std::size_t i = 1; i <= m; ++i) {
    cur[0] = {1.0};  // j = 0
    for (std::size_t j = 1; j <= n; ++j) {
      std::vector<double> dist(i * j + 1, 0.0);
      const auto& a = prev[j];  // (i-1, j): shift by j
      for (std::size_t u = 0; u < a.size(); ++u) dist[u + j] += a[u];
      const auto& b = cur[j - 1];  // (i, j-1)
      for (std::size_t u = 0; u < b.size(); ++u) dist[u] += b[u];
      cur[j] = std::move(dist);
    }
    std::swap(prev, cur);
  }
  return prev[n];
}

}  // namespace

UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b, Alternative alternative) {
  if (a.empty() || b.empty()) throw InvalidArgument("mann_whitney_u: both samples must be non-empty");
  const std::size_t n1 = a.size(), n2 = b.size(), N = n1 + n2;
  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(N);
  for (double v : a) pooled.emplace_back(v, true);
  for (double v : b) pooled.emplace_back(v, false);
  std::sort(pooled.begin(), pooled.end(), [](const auto& l, const auto& r) { return l.first < r.first; });

  double rank_sum_a = 0.0;
  double tie_term = 0.0;
  bool ties = false;
  for (std::size_t i = 0; i < N;) {
    std::size_t j = i;
    while (j < N && pooled[j].first == pooled[i].first) ++j;
    const double t = static_cast<double>(j - i);
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (pooled[k].second) rank_sum_a += midrank;
    if (t > 1.0) {
      ties = true;
      tie_term += t * t * t - t;
    }
    i = j;
  }
  const double d1 = static_cast<double>(n1), d2 = static_cast<double>(n2), dN = static_cast<double>(N);
  UTestResult res;
  res.alternative = alternative;
  res.u_statistic = rank_sum_a - d1 * (d1 + 1.0) / 2.0;

  double p_greater = 1.0, p_less = 1.0;
  if (!ties && N <= kExactUTestLimit) {
    res.method = UTestMethod::exact;
    const auto counts = exact_u_counts(n1, n2);
    const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
    const auto u = static_cast<std::size_t>(std::llround(res.u_statistic));
    double ge = 0.0, le = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
      if (k >= u) ge += counts[k];
      if (k <= u) le += counts[k];
    }
    p_greater = ge / total;
    p_less = le / total;
  } else {
    res.method = UTestMethod::normal_approx;
    const double mu = d1 * d2 / 2.0;
    const double var = d1 * d2 / 12.0 * ((dN + 1.0) - tie_term / (dN * (dN - 1.0)));
    if (var > 0.0) {
      const double sd = std::sqrt(var);
      p_greater = normal_sf((res.u_statistic - mu - 0.5) / sd);
      p_less = normal_cdf((res.u_statistic - mu + 0.5) / sd);
    }
  }
  switch (alternative) {
    case Alternative::greater: res.p_value = p_greater; break;
    case Alternative::less: res.p_value = p_less; break;
    case Alternative::two_sided: res.p_value = 2.0 * std::min(p_greater, p_less); break;
  }
  res.p_value = std::clamp(res.p_value, 0.0, 1.0);
  return res;
}

// ---------------------------------------------------------------------------

double pearson_r(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("pearson_r: inputs differ in length");
  if (a.size() < 2) throw InvalidArgument("pearson_r: need at least 2 pairs");
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    saa += da * da;
    sbb += db * db;
    sab += da * db;
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw InvalidArgument("pearson_r: zero variance input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

MeanCi mean_ci(std::span<const double> samples, double level) {
  if (samples.size() < 2) throw InvalidArgument("mean_ci: need at least 2 samples");
  if (!(level > 0.0 && level < 1.0)) throw InvalidArgument("mean_ci: level must lie in (0, 1)");
  const double n = static_cast<double>(samples.size());
  MeanCi ci;
  ci.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : samples) ss += (v - ci.mean) * (v - ci.mean);
  const double s = std::sqrt(ss / (n - 1.0));
  ci.halfwidth = s == 0.0 ? 0.0 : student_t_quantile(0.5 + 0.5 * level, n - 1.0) * s / std::sqrt(n);
  return ci;
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InvalidArgument("adjusted_rand_index: labelings differ in length");
  const std::size_t n = a.size();
  if (n < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < n; ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto c2 = [](double v) { return v * (v - 1.0) / 2.0; };
  double index = 0.0, sa = 0.0, sb = 0.0;
  for (const auto& [k, v] : joint) index += c2(v);
  for (const auto& [k, v] : ra) sa += c2(v);
  for (const auto& [k, v] : rb) sb += c2(v);
  const double expected = sa * sb / c2(static_cast<double>(n));
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace toxtraj::stats
