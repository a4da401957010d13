#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string_view>

#include "toxtraj/error.hpp"

namespace toxtraj::stats {

/// Significance is strict: p < alpha.
inline constexpr double kDefaultAlpha = 0.05;
inline bool is_significant(double p, double alpha = kDefaultAlpha) { return p < alpha; }

// Distribution functions ------------------------------------------------------

double normal_cdf(double z);
/// Upper tail 1 - Phi(z), accurate for large z.
double normal_sf(double z);
/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);
double student_t_cdf(double t, double df);
/// Two-sided tail P(|T| >= |t|).
double student_t_two_sided(double t, double df);
double student_t_quantile(double p, double df);

// Regression ------------------------------------------------------------------

struct TrendFit {
  double slope = 0.0;
  double intercept = 0.0;
  double stderr_slope = 0.0;
  double t_stat = 0.0;
  double p_value = 1.0;  ///< two-sided, t with n - 2 df
  std::size_t n = 0;
  bool perfect_fit = false;  ///< residual variance is zero
};

/// Least-squares line y = intercept + slope * x with a two-sided slope test.
/// A fit with zero residual variance reports p = 0 (slope != 0) or p = 1
/// (slope == 0) and a zero standard error.
TrendFit ols_trend(std::span<const double> x, std::span<const double> y);

// Mann-Whitney U ----------------------------------------------------------------

enum class Alternative { greater, less, two_sided };
enum class UTestMethod { exact, normal_approx };

struct UTestResult {
  double u_statistic = 0.0;  ///< U for the first sample (midranks)
  double p_value = 1.0;
  Alternative alternative = Alternative::two_sided;
  UTestMethod method = UTestMethod::normal_approx;
};

/// Samples up to this combined size without ties use the exact null.
inline constexpr std::size_t kExactUTestLimit = 16;

/// "greater" tests whether `a` tends to exceed `b`. Exact null distribution
/// for small tie-free samples, otherwise normal approximation with tie and
/// continuity corrections.
UTestResult mann_whitney_u(std::span<const double> a, std::span<const double> b, Alternative alternative);

// Agreement and correlation -------------------------------------------------------

double pearson_r(std::span<const double> a, std::span<const double> b);

/// Cohen's kappa for two raters over the same items. Perfect agreement on a
/// single category (p_e = 1) returns 1.
template <class Label>
double cohens_kappa(std::span<const Label> a, std::span<const Label> b) {
  if (a.size() != b.size()) throw InvalidArgument("cohens_kappa: label sequences differ in length");
  if (a.empty()) throw InvalidArgument("cohens_kappa: empty label sequences");
  std::map<Label, std::pair<double, double>> marginals;
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    marginals[a[i]].first += 1.0;
    marginals[b[i]].second += 1.0;
    if (a[i] == b[i]) agree += 1.0;
  }
  const double n = static_cast<double>(a.size());
  const double po = agree / n;
  double pe = 0.0;
  for (const auto& [label, m] : marginals) pe += (m.first / n) * (m.second / n);
  if (pe >= 1.0) return 1.0;
  return (po - pe) / (1.0 - pe);
}

struct MeanCi {
  double mean = 0.0;
  double halfwidth = 0.0;
};

/// Student-t confidence interval for the mean: t_{n-1} * s / sqrt(n).
MeanCi mean_ci(std::span<const double> samples, double level = 0.95);

/// Adjusted Rand index between two labelings; every distinct value (noise
/// included) is its own class.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace toxtraj::stats
