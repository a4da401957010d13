#pragma once

#include <cstddef>
#include <cstdint>

#include "toxtraj/matrix.hpp"

namespace toxtraj::permanova {

inline constexpr std::size_t kDefaultPermutations = 4999;

struct SsDecomposition {
  double ss_between = 0.0;
  double ss_within = 0.0;
};

/// Rows of a and b are the observation vectors of the two groups.
SsDecomposition ss_decomposition(const Matrix& a, const Matrix& b);

/// SS_between / (SS_within / (N - 2)). Returns +inf when SS_within = 0 and
/// SS_between > 0, and 0 when SS_between = 0.
double pseudo_f(double ss_between, double ss_within, std::size_t n_total);

struct PermanovaResult {
  double pseudo_f = 0.0;
  bool f_infinite = false;
  double p_value = 1.0;
  double eta_squared = 0.0;
  double ss_between = 0.0;
  double ss_within = 0.0;
  std::size_t n_permutations = 0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  std::size_t df_between = 1;
  std::size_t df_within = 0;
  std::uint64_t seed = 0;

  bool operator==(const PermanovaResult&) const = default;
};

/// Label-permutation test; p = (1 + #{F_perm >= F_obs}) / (1 + permutations).
/// Permutation i shuffles the labels with its own stream (seed, i), so the
/// result does not depend on the worker count, and swapping a and b yields
/// the same p bit-for-bit.
PermanovaResult permanova_test(const Matrix& a, const Matrix& b, std::size_t n_permutations = kDefaultPermutations,
                               std::uint64_t seed = 0, unsigned workers = 1);

}  // namespace toxtraj::permanova
