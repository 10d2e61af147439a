#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "rtq/tensor.hpp"

namespace rtq {

enum class DistanceMetric { euclidean, cosine };

struct ClusteringOptions {
  std::size_t max_iter = 20;
  DistanceMetric metric = DistanceMetric::euclidean;
  bool swap_polish = true;
  /// Independent seedings; the lowest-cost run wins (first on ties).
  std::size_t restarts = 1;
  /// When C(n, k) is at most this, the medoid set is found by exact
  /// enumeration instead of local search. 0 disables.
  std::size_t exhaustive_limit = 5000;
};

struct ClusteringResult {
  /// Point index of each cluster's medoid; pairwise distinct.
  std::vector<std::size_t> medoid_indices;
  /// Cluster (position in medoid_indices) of every point.
  std::vector<std::size_t> assignment;
  /// Sum over points of the distance to the assigned medoid.
  double cost = 0.0;
  /// Cost after the initial assignment and after every iteration.
  std::vector<double> cost_history;
  std::size_t iterations = 0;
};

/// Pairwise distance under the given metric for two rows of length d.
double point_distance(std::span<const double> a, std::span<const double> b, DistanceMetric metric);

/// k-medoids with k-means++-style seeding (sampling weighted by squared
/// distance to the nearest chosen medoid) followed by Voronoi iteration:
/// assign every point to its nearest medoid, then move each medoid to the
/// member minimizing the within-cluster distance sum. Ties go to the lowest
/// point index. Stops when the assignment no longer changes, then applies
/// single-medoid swaps while they lower the cost. Small problems (see
/// ClusteringOptions::exhaustive_limit) are solved exactly.
ClusteringResult kmedoidspp_cluster(std::span<const double> points, std::size_t n, std::size_t d, std::size_t k,
                                    std::uint64_t seed, const ClusteringOptions& options = {});
/// Convenience overload over an [n, d] tensor.
ClusteringResult kmedoidspp_cluster(const Tensor& points, std::size_t k, std::uint64_t seed,
                                    const ClusteringOptions& options = {});

struct PatchOrigin {
  std::size_t frame = 0;
  std::size_t position = 0;  // 0 is the frame's [CLS] token

  friend bool operator==(const PatchOrigin&, const PatchOrigin&) = default;
};

struct SegmentedVideoEmbedding {
  Tensor values;  // [S, 1 + P_out, d]
  std::vector<std::vector<PatchOrigin>> source_index;
  std::size_t segments = 0;
  std::size_t kept_per_segment = 0;  // 1 + P_out
};

/// Groups F frames of [F, 1 + P_in, d] embeddings into S segments, clusters
/// every segment's pooled patches into 1 + P_out clusters and keeps the
/// medoid patches. Slot 0 of each segment holds the surviving [CLS] of the
/// earliest frame, or the medoid of the largest cluster when no [CLS]
/// survives; the remaining kept patches follow in (frame, position) order.
/// Segment s is clustered with seed + s. Gradients reach kept patches only.
SegmentedVideoEmbedding refine(const Tensor& frames, std::size_t segments, std::size_t patches_out,
                               std::uint64_t seed, const ClusteringOptions& options = {});

}  // namespace rtq
