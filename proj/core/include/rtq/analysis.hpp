#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace rtq {

/// Per-sample correctness of one method over a fixed evaluation set.
struct MethodVector {
  std::string name;
  std::vector<std::uint8_t> bits;
};

/// Number of samples on which both methods are equally right or wrong.
std::size_t agreement(const MethodVector& m, const MethodVector& n);
/// N - agreement: the mismatch count.
std::size_t hamming_distance(const MethodVector& m, const MethodVector& n);

struct Merge {
  std::size_t a = 0;
  std::size_t b = 0;
  double distance = 0.0;
  std::size_t id = 0;
};

/// Leaves are 0..n-1 in input order; merge i creates cluster n+i.
struct Dendrogram {
  std::vector<Merge> merges;
  std::vector<std::size_t> leaf_order;
  /// False when some merge distance is lower than its predecessor.
  bool monotone = true;
  std::vector<std::string> diagnostics;
};

/// Average-linkage agglomerative clustering on Hamming distances. Ties go
/// to the lowest (a, b) cluster pair.
Dendrogram cluster_methods(const std::vector<MethodVector>& vectors);

/// Flat clustering obtained by applying every merge with distance <= height.
/// Each cluster is a sorted list of leaf names; the list is sorted too.
std::vector<std::vector<std::string>> flat_clusters(const std::vector<MethodVector>& vectors,
                                                    const Dendrogram& dendrogram, double height);

/// Reads "method,sample_id,correct" records. A header line with those
/// column names is skipped. Columns are sorted by sample id.
std::vector<MethodVector> parse_predictions(const std::string& text);
std::vector<MethodVector> load_predictions(const std::filesystem::path& path);

struct HeatmapData {
  std::vector<MethodVector> rows;
  std::vector<Merge> merges;
};

/// {"methods", "matrix", "merges"} with rows in dendrogram leaf order.
std::string heatmap_json(const std::vector<MethodVector>& vectors, const Dendrogram& dendrogram);
void export_heatmap_data(const std::vector<MethodVector>& vectors, const Dendrogram& dendrogram,
                         const std::filesystem::path& path);
HeatmapData parse_heatmap_json(const std::string& text);
HeatmapData import_heatmap_data(const std::filesystem::path& path);

}  // namespace rtq
