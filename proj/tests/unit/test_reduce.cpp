#include <gtest/gtest.h>

#include "temp_dir.hpp"
#include "toxtraj/error.hpp"
#include "toxtraj/reduce.hpp"
#include "toxtraj/rng.hpp"

using namespace toxtraj;

namespace {

EmbeddingMatrix anisotropic(std::size_t n, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  EmbeddingMatrix e;
  e.values = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    e.row_ids.push_back("r" + std::to_string(i));
    for (std::size_t j = 0; j < d; ++j) e.values(i, j) = 3.0 + rng.normal(0.0, static_cast<double>(d - j));
  }
  return e;
}

// ||C v - lambda v|| with C the plain covariance of the rows.
double eigen_residual(const Matrix& x, std::span<const double> v, double lambda) {
  const std::size_t m = x.rows, d = x.cols;
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += x(i, j) / static_cast<double>(m);
  std::vector<double> proj(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) proj[i] += (x(i, j) - mean[j]) * v[j];
  double r = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double cv = 0.0;
    for (std::size_t i = 0; i < m; ++i) cv += (x(i, j) - mean[j]) * proj[i];
    cv /= static_cast<double>(m - 1);
    r += (cv - lambda * v[j]) * (cv - lambda * v[j]);
  }
  return std::sqrt(r);
}

}  // namespace

TEST(SampleSize, FloorWithFloor) {
  EXPECT_EQ(reducer_sample_size(10000, 0.1, 5), 1000u);
  EXPECT_EQ(reducer_sample_size(999, 0.1, 5), 99u);
  EXPECT_EQ(reducer_sample_size(20, 0.1, 5), 6u);
  EXPECT_THROW(reducer_sample_size(5, 0.1, 5), InvalidArgument);
  EXPECT_THROW(reducer_sample_size(100, 0.0, 5), InvalidArgument);
  EXPECT_EQ(kDefaultSampleFraction, 0.10);
  EXPECT_EQ(kDefaultOutputDim, 5u);
}

TEST(Pca, ComponentsAreOrthonormalEigenvectors) {
  for (auto [n, d] : {std::pair<std::size_t, std::size_t>{300, 8}, {12, 30}}) {
    const auto e = anisotropic(n, d, n + d);
    const auto model = fit_pca(e.values, 5);
    ASSERT_EQ(model.components.rows, 5u);
    for (std::size_t a = 0; a < 5; ++a) {
      for (std::size_t b = 0; b < 5; ++b) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += model.components(a, j) * model.components(b, j);
        EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-9);
      }
      if (a > 0) EXPECT_GE(model.explained_variance[a - 1], model.explained_variance[a]);
      EXPECT_LT(eigen_residual(e.values, model.components.row(a), model.explained_variance[a]),
                1e-8 * (1.0 + model.explained_variance[0]));
    }
  }
}

TEST(Pca, SignConventionAndAxisRecovery) {
  const auto e = anisotropic(2000, 6, 1);
  const auto model = fit_pca(e.values, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < 6; ++j)
      if (std::abs(model.components(c, j)) > std::abs(model.components(c, arg))) arg = j;
    EXPECT_EQ(arg, c);
    EXPECT_GT(model.components(c, arg), 0.0);
  }
}

TEST(Reduce, FitTransformDeterminismAndRoundTrip) {
  testing_support::TempDir dir("reduce");
  const auto e = anisotropic(500, 10, 2);
  const auto a = fit_on_sample(e, 0.1, 5, 42);
  EXPECT_EQ(a.sample_size, 50u);
  EXPECT_EQ(fit_on_sample(e, 0.1, 5, 42), a);
  EXPECT_NE(fit_on_sample(e, 0.1, 5, 43).mean, a.mean);
  const auto t1 = transform(a, e, 1);
  EXPECT_EQ(t1.d(), 5u);
  EXPECT_EQ(t1.row_ids, e.row_ids);
  EXPECT_EQ(transform(a, e, 8), t1);
  write_reducer_model(dir / "m.json", a);
  EXPECT_EQ(read_reducer_model(dir / "m.json"), a);
  EXPECT_THROW(transform(a, anisotropic(5, 9, 1)), InvalidArgument);
}

TEST(Reduce, ExternalIsIdentity) {
  const auto e = anisotropic(40, 5, 3);
  EXPECT_EQ(transform(external_model(5), e), e);
  EXPECT_THROW(transform(external_model(4), e), InvalidArgument);
}
