#include "toxtraj/permanova.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "toxtraj/error.hpp"
#include "toxtraj/parallel.hpp"
#include "toxtraj/rng.hpp"

namespace toxtraj::permanova {

namespace {

std::vector<double> centroid(const Matrix& m) {
  std::vector<double> c(m.cols, 0.0);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) c[j] += m(i, j);
  for (auto& v : c) v /= static_cast<double>(m.rows);
  return c;
}

// Between-group SS for a 0/1 labelling of the pooled rows:
// (nA nB / N) * |mean_A - mean_B|^2, both sums accumulated in pool order.
double between_ss(const Matrix& pool, const std::vector<unsigned char>& is_a, std::size_t n_a,
                  std::vector<double>& sa, std::vector<double>& sb) {
  const std::size_t d = pool.cols, n = pool.rows, n_b = n - n_a;
  std::fill(sa.begin(), sa.end(), 0.0);
  std::fill(sb.begin(), sb.end(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto& acc = is_a[i] ? sa : sb;
    const double* r = pool.values.data() + i * d;
    for (std::size_t j = 0; j < d; ++j) acc[j] += r[j];
  }
  const double ia = 1.0 / static_cast<double>(n_a), ib = 1.0 / static_cast<double>(n_b);
  double s = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double diff = sa[j] * ia - sb[j] * ib;
    s += diff * diff;
  }
  return static_cast<double>(n_a) * static_cast<double>(n_b) / static_cast<double>(n) * s;
}

}  // namespace

SsDecomposition ss_decomposition(const Matrix& a, const Matrix& b) {
  if (a.rows == 0 || b.rows == 0) throw InvalidArgument("ss_decomposition: both groups must be non-empty");
  if (a.cols != b.cols) throw InvalidArgument("ss_decomposition: groups differ in dimension");
  const auto ca = centroid(a), cb = centroid(b);
  const double na = static_cast<double>(a.rows), nb = static_cast<double>(b.rows);
  std::vector<double> grand(a.cols);
  for (std::size_t j = 0; j < a.cols; ++j) grand[j] = (na * ca[j] + nb * cb[j]) / (na + nb);
  SsDecomposition out;
  double da = 0.0, db = 0.0;
  for (std::size_t j = 0; j < a.cols; ++j) {
    da += (ca[j] - grand[j]) * (ca[j] - grand[j]);
    db += (cb[j] - grand[j]) * (cb[j] - grand[j]);
  }
  out.ss_between = na * da + nb * db;
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out.ss_within += (a(i, j) - ca[j]) * (a(i, j) - ca[j]);
  for (std::size_t i = 0; i < b.rows; ++i)
    for (std::size_t j = 0; j < b.cols; ++j) out.ss_within += (b(i, j) - cb[j]) * (b(i, j) - cb[j]);
  return out;
}

double pseudo_f(double ss_between, double ss_within, std::size_t n_total) {
  if (n_total < 3) throw InvalidArgument("pseudo_f: need at least 3 observations");
  if (ss_between < 0.0 || ss_within < 0.0) throw InvalidArgument("pseudo_f: sums of squares must be non-negative");
  if (ss_between == 0.0) return 0.0;
  if (ss_within == 0.0) return std::numeric_limits<double>::infinity();
  return ss_between / (ss_within / static_cast<double>(n_total - 2));
}

namespace {

// Rows sorted lexicographically, so results ignore input row order.
Matrix sorted_rows(const Matrix& m) {
  std::vector<std::size_t> idx(m.rows);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
    return std::lexicographical_compare(m.row(x).begin(), m.row(x).end(), m.row(y).begin(), m.row(y).end());
  });
  Matrix out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.rows; ++i) std::copy_n(m.row(idx[i]).begin(), m.cols, out.row(i).begin());
  return out;
}

}  // namespace

PermanovaResult permanova_test(const Matrix& a_in, const Matrix& b_in, std::size_t n_permutations, std::uint64_t seed,
                               unsigned workers) {
  if (n_permutations == 0) throw InvalidArgument("permanova: at least one permutation is required");
  if (a_in.rows == 0 || b_in.rows == 0) throw InvalidArgument("permanova: both groups must be non-empty");
  if (a_in.cols != b_in.cols) throw InvalidArgument("permanova: groups differ in dimension");
  if (a_in.rows + b_in.rows < 3) throw InvalidArgument("permanova: need at least 3 observations");

  // Work on a canonical orientation of the two groups so that swapping the
  // arguments reproduces every number exactly.
  Matrix a = sorted_rows(a_in), b = sorted_rows(b_in);
  if (b.rows < a.rows || (a.rows == b.rows && std::lexicographical_compare(b.values.begin(), b.values.end(),
                                                                            a.values.begin(), a.values.end())))
    std::swap(a, b);

  const auto ss = ss_decomposition(a, b);
  const std::size_t n = a.rows + b.rows, d = a.cols;

  PermanovaResult res;
  res.n_a = a_in.rows;
  res.n_b = b_in.rows;
  res.n_permutations = n_permutations;
  res.seed = seed;
  res.df_within = n - 2;
  res.ss_between = ss.ss_between;
  res.ss_within = ss.ss_within;
  res.pseudo_f = pseudo_f(ss.ss_between, ss.ss_within, n);
  res.f_infinite = res.pseudo_f == std::numeric_limits<double>::infinity();
  const double total = ss.ss_between + ss.ss_within;
  res.eta_squared = total > 0.0 ? ss.ss_between / total : 0.0;

  Matrix pool(n, d);
  std::copy(a.values.begin(), a.values.end(), pool.values.begin());
  std::copy(b.values.begin(), b.values.end(), pool.values.begin() + static_cast<std::ptrdiff_t>(a.values.size()));
  std::vector<unsigned char> labels(n, 0);
  std::fill_n(labels.begin(), a.rows, 1);

  // SS_total is fixed under relabelling, so F_perm >= F_obs iff
  // SS_between_perm >= SS_between_obs.
  std::vector<double> sa(d), sb(d);
  const double observed = between_ss(pool, labels, a.rows, sa, sb);
  std::vector<unsigned char> hit(n_permutations, 0);
  parallel_for(n_permutations, workers, [&](std::size_t p) {
    std::vector<double> ta(d), tb(d);
    std::vector<unsigned char> perm = labels;
    Rng rng = Rng::stream(seed, fnv1a("permanova"), p);
    shuffle(rng, perm);
    hit[p] = between_ss(pool, perm, a.rows, ta, tb) >= observed ? 1 : 0;
  });
  const auto count = static_cast<std::size_t>(std::accumulate(hit.begin(), hit.end(), std::size_t{0}));
  res.p_value = static_cast<double>(1 + count) / static_cast<double>(1 + n_permutations);
  return res;
}

}  // namespace toxtraj::permanova
