#include "toxtraj/reduce.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "toxtraj/error.hpp"
#include "toxtraj/parallel.hpp"
#include "toxtraj/rng.hpp"

namespace toxtraj {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

std::size_t reducer_sample_size(std::size_t n, double fraction, std::size_t output_dim) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw InvalidArgument("reduce: fraction must lie in (0, 1]");
  if (output_dim == 0) throw InvalidArgument("reduce: output_dim must be positive");
  // The small epsilon keeps exact products such as 0.1 * 10000 from flooring
  // one short.
  auto m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  m = std::max(m, output_dim + 1);
  if (m > n) throw InvalidArgument("reduce: sample too small for the requested output dimension");
  return m;
}

ReducerModel fit_pca(const Matrix& rows, std::size_t output_dim) {
  const std::size_t m = rows.rows, d = rows.cols;
  if (output_dim == 0 || output_dim > d) throw InvalidArgument("reduce: output_dim must lie in [1, input_dim]");
  if (m < output_dim + 1) throw InvalidArgument("reduce: sample too small for the requested output dimension");
  Eigen::Map<const RowMatrix> x(rows.values.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const RowMatrix centered = x.rowwise() - mu;
  const double denom = static_cast<double>(m - 1);

  // Eigen-decompose whichever of the d x d covariance and the m x m Gram
  // matrix is smaller; both share the nonzero spectrum.
  Eigen::MatrixXd vecs;  // d x output_dim
  Eigen::VectorXd vals(static_cast<Eigen::Index>(output_dim));
  const auto k = static_cast<Eigen::Index>(output_dim);
  if (d <= m) {
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw Error("reduce: eigen-decomposition failed");
    vecs.resize(static_cast<Eigen::Index>(d), k);
    for (Eigen::Index c = 0; c < k; ++c) {
      const Eigen::Index src = static_cast<Eigen::Index>(d) - 1 - c;  // ascending order from Eigen
      vecs.col(c) = es.eigenvectors().col(src);
      vals(c) = std::max(0.0, es.eigenvalues()(src));
    }
  } else {
    const Eigen::MatrixXd gram = (centered * centered.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw Error("reduce: eigen-decomposition failed");
    vecs.resize(static_cast<Eigen::Index>(d), k);
    for (Eigen::Index c = 0; c < k; ++c) {
      const Eigen::Index src = static_cast<Eigen::Index>(m) - 1 - c;
      Eigen::VectorXd v = centered.transpose() * es.eigenvectors().col(src);
      const double norm = v.norm();
      if (norm > 0.0) v /= norm;
      vecs.col(c) = v;
      vals(c) = std::max(0.0, es.eigenvalues()(src));
    }
    // Rank-deficient samples leave zero columns; complete them to an
    // orthonormal set deterministically with Gram-Schmidt on unit vectors.
    Eigen::Index basis = 0;
    for (Eigen::Index c = 0; c < k; ++c) {
      if (vecs.col(c).norm() > 0.5) continue;
      while (true) {
        Eigen::VectorXd v = Eigen::VectorXd::Unit(static_cast<Eigen::Index>(d), basis++);
        for (Eigen::Index o = 0; o < k; ++o)
          if (o != c && vecs.col(o).norm() > 0.5) v -= vecs.col(o).dot(v) * vecs.col(o);
        if (v.norm() > 1e-6) {
          vecs.col(c) = v.normalized();
          break;
        }
      }
    }
  }

  ReducerModel model;
  model.kind = ReducerKind::pca;
  model.input_dim = d;
  model.output_dim = output_dim;
  model.sample_size = m;
  model.mean.assign(mu.data(), mu.data() + d);
  model.components = Matrix(output_dim, d);
  for (std::size_t c = 0; c < output_dim; ++c) {
    const auto col = vecs.col(static_cast<Eigen::Index>(c));
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < col.size(); ++j)
      if (std::abs(col(j)) > std::abs(col(arg))) arg = j;
    const double sign = col(arg) < 0.0 ? -1.0 : 1.0;
    for (std::size_t j = 0; j < d; ++j) model.components(c, j) = sign * col(static_cast<Eigen::Index>(j));
    model.explained_variance.push_back(vals(static_cast<Eigen::Index>(c)));
  }
  return model;
}

ReducerModel fit_on_sample(const EmbeddingMatrix& matrix, double fraction, std::size_t output_dim, std::uint64_t seed) {
  if (output_dim > matrix.d()) throw InvalidArgument("reduce: output_dim exceeds input dimension");
  const std::size_t m = reducer_sample_size(matrix.n(), fraction, output_dim);
  Rng rng = Rng::stream(seed, fnv1a("reduce"));
  const auto rows = sample_without_replacement(rng, matrix.n(), m);
  Matrix sample(m, matrix.d());
  for (std::size_t i = 0; i < m; ++i) std::copy_n(matrix.row(rows[i]).begin(), matrix.d(), sample.row(i).begin());
  ReducerModel model = fit_pca(sample, output_dim);
  model.seed = seed;
  return model;
}

ReducerModel external_model(std::size_t dim) {
  ReducerModel model;
  model.kind = ReducerKind::external;
  model.input_dim = dim;
  model.output_dim = dim;
  return model;
}

EmbeddingMatrix transform(const ReducerModel& model, const EmbeddingMatrix& matrix, unsigned workers) {
  if (matrix.d() != model.input_dim)
    throw InvalidArgument("reduce: matrix has " + std::to_string(matrix.d()) + " columns, model expects " +
                          std::to_string(model.input_dim));
  if (model.kind == ReducerKind::external) return matrix;
  EmbeddingMatrix out;
  out.row_ids = matrix.row_ids;
  out.values = Matrix(matrix.n(), model.output_dim);
  const std::size_t d = model.input_dim;
  parallel_for(matrix.n(), workers, [&](std::size_t i) {
    const auto x = matrix.row(i);
    for (std::size_t c = 0; c < model.output_dim; ++c) {
      const auto w = model.components.row(c);
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += (x[j] - model.mean[j]) * w[j];
      out.values(i, c) = s;
    }
  });
  return out;
}

void write_reducer_model(const std::filesystem::path& path, const ReducerModel& model) {
  nlohmann::json j = {{"kind", model.kind == ReducerKind::pca ? "pca" : "external"},
                      {"input_dim", model.input_dim},
                      {"output_dim", model.output_dim},
                      {"sample_size", model.sample_size},
                      {"seed", model.seed},
                      {"mean", model.mean},
                      {"components", model.components.values},
                      {"explained_variance", model.explained_variance}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump() << '\n';
}

ReducerModel read_reducer_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    const auto j = nlohmann::json::parse(in);
    ReducerModel m;
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "pca") m.kind = ReducerKind::pca;
    else if (kind == "external") m.kind = ReducerKind::external;
    else throw FormatError("unknown reducer kind " + kind);
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.output_dim = j.at("output_dim").get<std::size_t>();
    m.sample_size = j.at("sample_size").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.mean = j.at("mean").get<std::vector<double>>();
    m.components = Matrix(m.kind == ReducerKind::pca ? m.output_dim : 0, m.kind == ReducerKind::pca ? m.input_dim : 0);
    m.components.values = j.at("components").get<std::vector<double>>();
    if (m.components.values.size() != m.components.rows * m.components.cols)
      throw FormatError("component matrix has the wrong size");
    m.explained_variance = j.at("explained_variance").get<std::vector<double>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace toxtraj
