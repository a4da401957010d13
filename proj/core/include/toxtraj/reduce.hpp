#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "toxtraj/corpus.hpp"
#include "toxtraj/matrix.hpp"

namespace toxtraj {

enum class ReducerKind { pca, external };

struct ReducerModel {
  ReducerKind kind = ReducerKind::pca;
  std::size_t input_dim = 0;
  std::size_t output_dim = 5;
  std::vector<double> mean;              ///< length input_dim (pca)
  Matrix components;                     ///< output_dim x input_dim, orthonormal rows (pca)
  std::vector<double> explained_variance;  ///< per component, non-increasing (pca)
  std::size_t sample_size = 0;
  std::uint64_t seed = 0;

  bool operator==(const ReducerModel&) const = default;
};

inline constexpr double kDefaultSampleFraction = 0.10;
inline constexpr std::size_t kDefaultOutputDim = 5;

/// floor(fraction * n), raised to output_dim + 1 when smaller.
std::size_t reducer_sample_size(std::size_t n, double fraction, std::size_t output_dim);

/// Fits PCA on a uniform sample (without replacement) of the rows. Each
/// component's largest-magnitude loading is made positive.
ReducerModel fit_on_sample(const EmbeddingMatrix& matrix, double fraction = kDefaultSampleFraction,
                           std::size_t output_dim = kDefaultOutputDim, std::uint64_t seed = 0);

/// PCA fit on exactly the given rows of a matrix.
ReducerModel fit_pca(const Matrix& rows, std::size_t output_dim);

/// Pass-through model for vectors reduced elsewhere.
ReducerModel external_model(std::size_t dim);

/// pca: (x - mean) * components^T per row; external: identity (checks dim).
EmbeddingMatrix transform(const ReducerModel& model, const EmbeddingMatrix& matrix, unsigned workers = 1);

void write_reducer_model(const std::filesystem::path& path, const ReducerModel& model);
ReducerModel read_reducer_model(const std::filesystem::path& path);

}  // namespace toxtraj
