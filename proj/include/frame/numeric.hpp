#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace frame {

// Sum that depends only on the multiset of values, not their order.
// Used wherever a statistic must be bitwise invariant to a permutation
// of positions (circular shifts of the image permute feature-map entries).
inline double permutation_invariant_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc;
}

inline double permutation_invariant_sum(std::span<const double> values) {
  return permutation_invariant_sum(
      std::vector<double>(values.begin(), values.end()));
}

// log(sum_i exp(x_i)) with the max shifted out.
inline double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

inline bool all_finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace frame
