#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace tsdiff {

// Empirical quantile with linear interpolation between order statistics:
// position q * (n - 1) into the sorted sample.
inline double linear_quantile(std::span<const double> sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("linear_quantile: empty sample");
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("linear_quantile: q outside [0, 1]");
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double pos = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double mean_of(std::span<const double> xs) {
    if (xs.empty()) throw std::invalid_argument("mean_of: empty sample");
    double s = 0.0;
    for (double x : xs) s += x;
    return s / static_cast<double>(xs.size());
}

// population convention (divide by n)
inline double stddev_of(std::span<const double> xs) {
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(xs.size()));
}

}  // namespace tsdiff
