#include <gtest/gtest.h>

#include "oracles.hpp"
#include "toxtraj/error.hpp"
#include "toxtraj/permanova.hpp"
#include "toxtraj/rng.hpp"
#include "toxtraj/synth.hpp"

using namespace toxtraj;
using namespace toxtraj::permanova;

namespace {

Matrix column(std::initializer_list<double> v) {
  Matrix m(v.size(), 1);
  m.values = v;
  return m;
}

Matrix gaussian(std::size_t n, std::size_t d, double shift, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(n, d);
  for (auto& v : m.values) v = rng.normal() + shift;
  return m;
}

}  // namespace

TEST(SsDecomposition, HandCase) {
  const auto s = ss_decomposition(column({0, 1}), column({2, 3}));
  EXPECT_EQ(s.ss_between, 4.0);
  EXPECT_EQ(s.ss_within, 1.0);
  EXPECT_EQ(pseudo_f(s.ss_between, s.ss_within, 4), 8.0);
}

TEST(SsDecomposition, MatchesDistanceFormulation) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto a = gaussian(3 + seed % 7, 1 + seed % 9, 0.3, seed);
    const auto b = gaussian(4 + seed % 5, 1 + seed % 9, 0.0, seed + 100);
    const auto s = ss_decomposition(a, b);
    const auto o = oracle::permanova_ss_from_distances(a, b);
    EXPECT_NEAR(s.ss_between, o.between, 1e-9 * (o.between + o.within));
    EXPECT_NEAR(s.ss_within, o.within, 1e-9 * (o.between + o.within));
  }
}

TEST(PseudoF, EdgeCases) {
  EXPECT_EQ(pseudo_f(0.0, 3.0, 10), 0.0);
  EXPECT_TRUE(std::isinf(pseudo_f(2.0, 0.0, 10)));
  EXPECT_THROW(pseudo_f(1.0, 1.0, 2), InvalidArgument);
}

TEST(Permanova, ResultFields) {
  const auto a = gaussian(10, 4, 0.0, 1), b = gaussian(12, 4, 0.0, 2);
  const auto r = permanova_test(a, b, 199, 7);
  EXPECT_EQ(r.n_a, 10u);
  EXPECT_EQ(r.n_b, 12u);
  EXPECT_EQ(r.df_between, 1u);
  EXPECT_EQ(r.df_within, 20u);
  EXPECT_EQ(r.n_permutations, 199u);
  EXPECT_NEAR(r.eta_squared, r.ss_between / (r.ss_between + r.ss_within), 1e-15);
  EXPECT_NEAR(r.pseudo_f, r.ss_between / (r.ss_within / 20.0), 1e-12);
  EXPECT_GE(r.p_value, 1.0 / 200.0);
  EXPECT_LE(r.p_value, 1.0);
  const double k = r.p_value * 200.0 - 1.0;
  EXPECT_NEAR(k, std::round(k), 1e-9);
}

TEST(Permanova, SeparatedGroupsHitMinimumP) {
  const auto r = permanova_test(gaussian(20, 5, 3.0, 1), gaussian(20, 5, 0.0, 2), 999, 3);
  EXPECT_DOUBLE_EQ(r.p_value, 1.0 / 1000.0);
}

TEST(Permanova, SwapAndWorkerInvariant) {
  auto a = gaussian(9, 3, 0.2, 4), b = gaussian(9, 3, 0.0, 5);
  b.values[0] = a.values[0];
  b.values[1] = a.values[1];
  b.values[2] = a.values[2];
  const auto r = permanova_test(a, b, 499, 11);
  const auto s = permanova_test(b, a, 499, 11);
  EXPECT_EQ(r.pseudo_f, s.pseudo_f);
  EXPECT_EQ(r.p_value, s.p_value);
  EXPECT_EQ(permanova_test(a, b, 499, 11, 8), r);
}

TEST(Permanova, NullPairIsUsuallyNotSignificant) {
  int rejections = 0;
  for (std::uint64_t t = 0; t < 40; ++t) {
    const auto [a, b] = synth::generate_null_pair(15, 27, 5, t);
    if (permanova_test(a, b, 199, t).p_value < 0.05) ++rejections;
  }
  EXPECT_LE(rejections, 8);
}

TEST(Permanova, Validation) {
  EXPECT_THROW(permanova_test(Matrix(0, 2), gaussian(3, 2, 0, 1), 9, 0), InvalidArgument);
  EXPECT_THROW(permanova_test(gaussian(3, 2, 0, 1), gaussian(3, 3, 0, 1), 9, 0), InvalidArgument);
}
