#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace toxtraj {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  std::span<double> row(std::size_t i) {
    assert(i < rows);
    return {values.data() + i * cols, cols};
  }
  std::span<const double> row(std::size_t i) const {
    assert(i < rows);
    return {values.data() + i * cols, cols};
  }
  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

  bool operator==(const Matrix&) const = default;
};

}  // namespace toxtraj
