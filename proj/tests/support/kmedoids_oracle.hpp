#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace rtq::testing {

/// Minimum k-medoids cost over every k-subset of the n points (Euclidean).
inline double brute_force_kmedoids(const std::vector<double>& points, std::size_t n, std::size_t d, std::size_t k) {
  auto dist = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += (points[a * d + c] - points[b * d + c]) * (points[a * d + c] - points[b * d + c]);
    return std::sqrt(s);
  };
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> pick(k);
  for (std::size_t i = 0; i < k; ++i) pick[i] = i;
  while (true) {
    double cost = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      double m = std::numeric_limits<double>::infinity();
      for (auto c : pick) m = std::min(m, dist(p, c));
      cost += m;
    }
    best = std::min(best, cost);
    std::size_t i = k;
    while (i > 0 && pick[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++pick[i - 1];
    for (std::size_t j = i; j < k; ++j) pick[j] = pick[j - 1] + 1;
  }
  return best;
}

}  // namespace rtq::testing
