#pragma once

// Small descriptive statistics used across the library.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "vfm/errors.hpp"

namespace vfm {

inline double mean(std::span<const double> v) {
  if (v.empty()) throw ContractError("mean of an empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Population standard deviation.
inline double stddev(std::span<const double> v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

// Linear interpolation between order statistics (the common "type 7" rule).
inline double quantile(std::span<const double> v, double q) {
  if (v.empty()) throw ContractError("quantile of an empty sample");
  if (!(q >= 0 && q <= 1)) throw ContractError("quantile level outside [0, 1]");
  std::vector<double> s(v.begin(), v.end());
  std::sort(s.begin(), s.end());
  const double pos = q * static_cast<double>(s.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, s.size() - 1);
  return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline double median(std::span<const double> v) { return quantile(v, 0.5); }

}  // namespace vfm
