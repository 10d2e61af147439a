#include "rtq/refinement.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "rtq/error.hpp"
#include "rtq/ops.hpp"

namespace rtq {

double point_distance(std::span<const double> a, std::span<const double> b, DistanceMetric metric) {
  if (metric == DistanceMetric::euclidean) {
    double ss = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) ss += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(ss);
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    dot += a[j] * b[j];
    na += a[j] * a[j];
    nb += b[j] * b[j];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  if (denom == 0.0) return (na == 0.0 && nb == 0.0) ? 0.0 : 1.0;
  return std::max(0.0, 1.0 - dot / denom);
}

namespace {

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

struct Assignment {
  std::vector<std::size_t> cluster;
  double cost = 0.0;
};

Assignment assign_points(const std::vector<double>& dist, std::size_t n, const std::vector<std::size_t>& medoids) {
  Assignment a;
  a.cluster.assign(n, 0);
  std::vector<std::size_t> own(n, std::numeric_limits<std::size_t>::max());
  for (std::size_t c = 0; c < medoids.size(); ++c) own[medoids[c]] = c;
  for (std::size_t i = 0; i < n; ++i) {
    if (own[i] != std::numeric_limits<std::size_t>::max()) {
      a.cluster[i] = own[i];
      continue;
    }
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < medoids.size(); ++c) {
      const double dv = dist[i * n + medoids[c]];
      if (dv < best_d || (dv == best_d && medoids[c] < medoids[best])) {
        best_d = dv;
        best = c;
      }
    }
    a.cluster[i] = best;
    a.cost += best_d;
  }
  return a;
}

bool combinations_at_most(std::size_t n, std::size_t k, std::size_t limit) {
  // C(n, k) computed incrementally; bails out as soon as it exceeds limit.
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
    if (c > static_cast<double>(limit)) return false;
  }
  return true;
}

// Exact optimum over all k-subsets, lexicographically first on ties
// (within a relative 1e-12).
ClusteringResult cluster_exhaustive(const std::vector<double>& dist, std::size_t n, std::size_t k) {
  std::vector<std::size_t> combo(k);
  for (std::size_t i = 0; i < k; ++i) combo[i] = i;
  std::vector<std::size_t> best_combo = combo;
  Assignment best = assign_points(dist, n, combo);
  while (true) {
    std::size_t i = k;
    while (i > 0 && combo[i - 1] == n - k + i - 1) --i;
    if (i == 0) break;
    ++combo[i - 1];
    for (std::size_t j = i; j < k; ++j) combo[j] = combo[j - 1] + 1;
    Assignment a = assign_points(dist, n, combo);
    // Costs that differ only by rounding count as ties.
    if (a.cost < best.cost - 1e-12 * std::max(1.0, best.cost)) {
      best = std::move(a);
      best_combo = combo;
    }
  }
  ClusteringResult r;
  r.medoid_indices = std::move(best_combo);
  r.assignment = std::move(best.cluster);
  r.cost = best.cost;
  r.cost_history = {r.cost};
  return r;
}

ClusteringResult cluster_once(const std::vector<double>& dist, std::size_t n, std::size_t k, std::uint64_t seed,
                              const ClusteringOptions& options) {
  // Seeding.
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> medoids;
  medoids.reserve(k);
  std::vector<bool> chosen(n, false);
  medoids.push_back(static_cast<std::size_t>(rng() % n));
  chosen[medoids[0]] = true;
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i) nearest[i] = dist[i * n + medoids[0]];
  while (medoids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!chosen[i]) total += nearest[i] * nearest[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double u = unit_uniform(rng) * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (chosen[i] || nearest[i] == 0.0) continue;
        acc += nearest[i] * nearest[i];
        pick = i;
        if (acc > u) break;
      }
    } else {
      // Every remaining point coincides with a medoid.
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (!chosen[i]) pick = i;
      }
    }
    medoids.push_back(pick);
    chosen[pick] = true;
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist[i * n + pick]);
  }

  // Voronoi iteration.
  ClusteringResult result;
  Assignment current = assign_points(dist, n, medoids);
  result.cost_history.push_back(current.cost);
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    ++result.iterations;
    std::vector<std::vector<std::size_t>> members(k);
    for (std::size_t i = 0; i < n; ++i) members[current.cluster[i]].push_back(i);
    for (std::size_t c = 0; c < k; ++c) {
      std::size_t best = medoids[c];
      double best_sum = std::numeric_limits<double>::infinity();
      for (auto cand : members[c]) {
        double s = 0.0;
        for (auto other : members[c]) s += dist[cand * n + other];
        if (s < best_sum) {
          best_sum = s;
          best = cand;
        }
      }
      medoids[c] = best;
    }
    Assignment next = assign_points(dist, n, medoids);
    result.cost_history.push_back(next.cost);
    const bool unchanged = next.cluster == current.cluster;
    current = std::move(next);
    if (unchanged) break;
  }
  // Swap polish: replace a medoid by a non-medoid while that lowers cost.
  // Nearest and second-nearest medoid distances give each swap's delta in O(n).
  if (options.swap_polish && k < n) {
    std::vector<double> d1(n), d2(n);
    auto refresh = [&] {
      for (std::size_t i = 0; i < n; ++i) {
        double a = std::numeric_limits<double>::infinity(), b = a;
        for (auto m : medoids) {
          const double v = dist[i * n + m];
          if (v < a) {
            b = a;
            a = v;
          } else if (v < b) {
            b = v;
          }
        }
        d1[i] = a;
        d2[i] = b;
      }
    };
    refresh();
    std::vector<bool> is_medoid(n, false);
    for (auto m : medoids) is_medoid[m] = true;
    bool improved = true;
    while (improved) {
      improved = false;
      for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t cand = 0; cand < n; ++cand) {
          if (is_medoid[cand]) continue;
          double delta = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double via = dist[i * n + cand];
            const double base = current.cluster[i] == c ? d2[i] : d1[i];
            delta += std::min(base, via) - d1[i];
          }
          const double tol = 1e-12 * std::max(1.0, current.cost);
          if (delta >= -tol) continue;
          auto trial = medoids;
          trial[c] = cand;
          Assignment a = assign_points(dist, n, trial);
          if (a.cost < current.cost - tol) {
            is_medoid[medoids[c]] = false;
            is_medoid[cand] = true;
            medoids = std::move(trial);
            current = std::move(a);
            result.cost_history.push_back(current.cost);
            ++result.iterations;
            improved = true;
            refresh();
          }
        }
      }
    }
  }
  result.medoid_indices = std::move(medoids);
  result.assignment = std::move(current.cluster);
  result.cost = current.cost;
  return result;
}

}  // namespace

ClusteringResult kmedoidspp_cluster(std::span<const double> points, std::size_t n, std::size_t d, std::size_t k,
                                    std::uint64_t seed, const ClusteringOptions& options) {
  if (points.size() != n * d) throw ShapeError("point buffer does not hold n x d values");
  if (k < 1 || k > n) {
    throw ParameterError("k-medoids needs 1 <= k <= n, got k=" + std::to_string(k) + ", n=" + std::to_string(n));
  }
  if (options.max_iter < 1) throw ParameterError("max_iter must be at least 1");
  if (options.restarts < 1) throw ParameterError("restarts must be at least 1");

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = point_distance(points.subspan(i * d, d), points.subspan(j * d, d), options.metric);
      dist[i * n + j] = v;
      dist[j * n + i] = v;
    }
  }
  if (combinations_at_most(n, k, options.exhaustive_limit)) return cluster_exhaustive(dist, n, k);
  ClusteringResult best = cluster_once(dist, n, k, seed, options);
  for (std::size_t r = 1; r < options.restarts; ++r) {
    ClusteringResult next = cluster_once(dist, n, k, seed + r * 0x9E3779B97F4A7C15ULL, options);
    if (next.cost < best.cost) best = std::move(next);
  }
  return best;
}

ClusteringResult kmedoidspp_cluster(const Tensor& points, std::size_t k, std::uint64_t seed,
                                    const ClusteringOptions& options) {
  if (points.rank() != 2) throw ShapeError("clustering expects [n, d] points, got " + shape_string(points.shape()));
  return kmedoidspp_cluster(points.data(), points.dim(0), points.dim(1), k, seed, options);
}

SegmentedVideoEmbedding refine(const Tensor& frames, std::size_t segments, std::size_t patches_out,
                               std::uint64_t seed, const ClusteringOptions& options) {
  if (frames.rank() != 3) throw ShapeError("refine expects [F, 1+P_in, d], got " + shape_string(frames.shape()));
  const std::size_t F = frames.dim(0), tokens = frames.dim(1), d = frames.dim(2);
  if (segments == 0 || F % segments != 0) {
    throw ParameterError("frame count " + std::to_string(F) + " not divisible by " + std::to_string(segments) +
                         " segments");
  }
  const std::size_t per_segment = F / segments;
  const std::size_t pool = per_segment * tokens;
  const std::size_t keep = 1 + patches_out;
  if (keep > pool) {
    throw ParameterError("cannot keep " + std::to_string(keep) + " of " + std::to_string(pool) + " patches per segment");
  }

  SegmentedVideoEmbedding out;
  out.segments = segments;
  out.kept_per_segment = keep;
  std::vector<std::size_t> rows;
  rows.reserve(segments * keep);
  const auto all = frames.data();
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t first_row = s * pool;
    ClusteringResult cr = kmedoidspp_cluster(all.subspan(first_row * d, pool * d), pool, d, keep, seed + s, options);

    // Slot 0: earliest surviving [CLS], else medoid of the largest cluster.
    std::size_t head = pool;
    for (auto m : cr.medoid_indices) {
      if (m % tokens == 0 && (head == pool || m < head)) head = m;
    }
    if (head == pool) {
      std::vector<std::size_t> sizes(keep, 0);
      for (auto c : cr.assignment) ++sizes[c];
      std::size_t best = 0;
      for (std::size_t c = 1; c < keep; ++c) {
        if (sizes[c] > sizes[best] || (sizes[c] == sizes[best] && cr.medoid_indices[c] < cr.medoid_indices[best])) {
          best = c;
        }
      }
      head = cr.medoid_indices[best];
    }
    std::vector<std::size_t> rest;
    for (auto m : cr.medoid_indices) {
      if (m != head) rest.push_back(m);
    }
    std::sort(rest.begin(), rest.end());

    std::vector<PatchOrigin> origins;
    origins.reserve(keep);
    auto emit = [&](std::size_t local) {
      rows.push_back(first_row + local);
      origins.push_back({s * per_segment + local / tokens, local % tokens});
    };
    emit(head);
    for (auto m : rest) emit(m);
    out.source_index.push_back(std::move(origins));
  }
  const Tensor flat = reshape(frames, {F * tokens, d});
  out.values = reshape(gather_rows(flat, rows), {segments, keep, d});
  return out;
}

}  // namespace rtq
