#include "rtq/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "rtq/error.hpp"

namespace rtq {

namespace {

void check_lengths(const MethodVector& m, const MethodVector& n) {
  if (m.bits.size() != n.bits.size()) {
    throw ParameterError("method vectors '" + m.name + "' and '" + n.name + "' have lengths " +
                         std::to_string(m.bits.size()) + " and " + std::to_string(n.bits.size()));
  }
}

void check_vectors(const std::vector<MethodVector>& vectors) {
  std::set<std::string> names;
  for (const auto& v : vectors) {
    if (v.name.empty()) throw ValidationError("method name must not be empty");
    if (!names.insert(v.name).second) throw ValidationError("duplicate method name '" + v.name + "'");
    for (auto b : v.bits) {
      if (b > 1) throw ValidationError("method '" + v.name + "' has a non-binary entry");
    }
    check_lengths(vectors.front(), v);
  }
}

void order_leaves(const std::vector<Merge>& merges, std::size_t n, const std::vector<std::size_t>& sizes,
                  std::size_t node, std::vector<std::size_t>& out) {
  if (node < n) {
    out.push_back(node);
    return;
  }
  const Merge& m = merges[node - n];
  std::size_t first = m.a, second = m.b;
  if (sizes[second] < sizes[first]) std::swap(first, second);
  order_leaves(merges, n, sizes, first, out);
  order_leaves(merges, n, sizes, second, out);
}

}  // namespace

std::size_t agreement(const MethodVector& m, const MethodVector& n) {
  check_lengths(m, n);
  std::size_t count = 0;
  for (std::size_t i = 0; i < m.bits.size(); ++i) count += m.bits[i] == n.bits[i] ? 1 : 0;
  return count;
}

std::size_t hamming_distance(const MethodVector& m, const MethodVector& n) {
  return m.bits.size() - agreement(m, n);
}

Dendrogram cluster_methods(const std::vector<MethodVector>& vectors) {
  if (vectors.size() < 2) throw ParameterError("clustering needs at least two method vectors");
  check_vectors(vectors);
  const std::size_t n = vectors.size();
  const std::size_t total = 2 * n - 1;
  // Distances between active clusters, indexed by cluster id.
  std::vector<std::vector<double>> dist(total, std::vector<double>(total, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i][j] = dist[j][i] = static_cast<double>(hamming_distance(vectors[i], vectors[j]));
    }
  }
  std::vector<std::size_t> sizes(total, 1);
  std::vector<std::size_t> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = i;

  Dendrogram out;
  for (std::size_t id = n; id < total; ++id) {
    std::size_t ba = 0, bb = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t x = 0; x < active.size(); ++x) {
      for (std::size_t y = x + 1; y < active.size(); ++y) {
        const std::size_t a = std::min(active[x], active[y]), b = std::max(active[x], active[y]);
        const double d = dist[a][b];
        if (d < best || (d == best && std::pair(a, b) < std::pair(ba, bb))) {
          best = d;
          ba = a;
          bb = b;
        }
      }
    }
    if (!out.merges.empty() && best < out.merges.back().distance) {
      out.monotone = false;
      out.diagnostics.push_back("merge " + std::to_string(id) + " at distance " + std::to_string(best) +
                                " is below the previous merge at " + std::to_string(out.merges.back().distance));
    }
    out.merges.push_back({ba, bb, best, id});
    sizes[id] = sizes[ba] + sizes[bb];
    std::erase_if(active, [&](std::size_t c) { return c == ba || c == bb; });
    for (auto c : active) {
      const double d = (dist[ba][c] * static_cast<double>(sizes[ba]) + dist[bb][c] * static_cast<double>(sizes[bb])) /
                       static_cast<double>(sizes[id]);
      dist[id][c] = dist[c][id] = d;
    }
    active.push_back(id);
  }
  order_leaves(out.merges, n, sizes, total - 1, out.leaf_order);
  return out;
}

std::vector<std::vector<std::string>> flat_clusters(const std::vector<MethodVector>& vectors,
                                                    const Dendrogram& dendrogram, double height) {
  const std::size_t n = vectors.size();
  std::vector<std::vector<std::size_t>> members(2 * n - 1);
  std::set<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i) {
    members[i] = {i};
    roots.insert(i);
  }
  for (const auto& m : dendrogram.merges) {
    if (m.distance > height) break;
    members[m.id] = members[m.a];
    members[m.id].insert(members[m.id].end(), members[m.b].begin(), members[m.b].end());
    roots.erase(m.a);
    roots.erase(m.b);
    roots.insert(m.id);
  }
  std::vector<std::vector<std::string>> out;
  for (auto r : roots) {
    std::vector<std::string> names;
    for (auto leaf : members[r]) names.push_back(vectors[leaf].name);
    std::sort(names.begin(), names.end());
    out.push_back(std::move(names));
  }
  std::sort(out.begin(), out.end());
  return out;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_integer(const std::string& s, long long& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

std::vector<MethodVector> parse_predictions(const std::string& text) {
  std::vector<std::string> order;
  std::map<std::string, std::map<std::string, std::uint8_t>> table;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) cols.push_back(trim(col));
    if (cols.size() != 3) {
      throw ValidationError("line " + std::to_string(lineno) + ": expected method,sample_id,correct");
    }
    if (lineno == 1 && cols[0] == "method" && cols[1] == "sample_id" && cols[2] == "correct") continue;
    if (cols[0].empty()) throw ValidationError("line " + std::to_string(lineno) + ": empty method name");
    if (cols[1].empty()) throw ValidationError("line " + std::to_string(lineno) + ": empty sample id");
    if (cols[2] != "0" && cols[2] != "1") {
      throw ValidationError("line " + std::to_string(lineno) + ": correct must be 0 or 1, got '" + cols[2] + "'");
    }
    if (!table.count(cols[0])) order.push_back(cols[0]);
    auto& row = table[cols[0]];
    if (!row.emplace(cols[1], cols[2] == "1" ? 1 : 0).second) {
      throw ValidationError("line " + std::to_string(lineno) + ": duplicate record for " + cols[0] + "/" + cols[1]);
    }
  }
  if (order.empty()) throw ValidationError("predictions file has no records");

  std::vector<std::string> samples;
  for (const auto& [id, bit] : table[order.front()]) samples.push_back(id);
  for (const auto& name : order) {
    const auto& row = table[name];
    bool same = row.size() == samples.size();
    for (std::size_t i = 0; same && i < samples.size(); ++i) same = row.count(samples[i]) > 0;
    if (!same) throw ValidationError("method '" + name + "' covers a different sample set than '" + order.front() + "'");
  }
  const bool numeric = std::all_of(samples.begin(), samples.end(), [](const std::string& s) {
    long long v = 0;
    return parse_integer(s, v);
  });
  if (numeric) {
    std::sort(samples.begin(), samples.end(), [](const std::string& a, const std::string& b) {
      long long x = 0, y = 0;
      parse_integer(a, x);
      parse_integer(b, y);
      return x < y;
    });
  }
  std::vector<MethodVector> out;
  for (const auto& name : order) {
    MethodVector v{name, {}};
    for (const auto& s : samples) v.bits.push_back(table[name][s]);
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<MethodVector> load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read predictions from " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_predictions(ss.str());
}

std::string heatmap_json(const std::vector<MethodVector>& vectors, const Dendrogram& dendrogram) {
  check_vectors(vectors);
  if (dendrogram.leaf_order.size() != vectors.size()) {
    throw ParameterError("dendrogram covers " + std::to_string(dendrogram.leaf_order.size()) + " leaves, got " +
                         std::to_string(vectors.size()) + " vectors");
  }
  nlohmann::ordered_json j;
  j["methods"] = nlohmann::ordered_json::array();
  j["matrix"] = nlohmann::ordered_json::array();
  for (auto leaf : dendrogram.leaf_order) {
    j["methods"].push_back(vectors.at(leaf).name);
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (auto b : vectors[leaf].bits) row.push_back(static_cast<int>(b));
    j["matrix"].push_back(row);
  }
  j["merges"] = nlohmann::ordered_json::array();
  for (const auto& m : dendrogram.merges) j["merges"].push_back({m.a, m.b, m.distance, m.id});
  return j.dump() + "\n";
}

void export_heatmap_data(const std::vector<MethodVector>& vectors, const Dendrogram& dendrogram,
                         const std::filesystem::path& path) {
  const std::string text = heatmap_json(vectors, dendrogram);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write analysis to " + path.string());
  out << text;
  if (!out) throw IoError("failed writing analysis to " + path.string());
}

HeatmapData parse_heatmap_json(const std::string& text) {
  HeatmapData out;
  try {
    const auto j = nlohmann::json::parse(text);
    const auto& methods = j.at("methods");
    const auto& matrix = j.at("matrix");
    if (methods.size() != matrix.size()) throw ValidationError("methods and matrix row counts differ");
    for (std::size_t i = 0; i < methods.size(); ++i) {
      MethodVector v{methods[i].get<std::string>(), {}};
      for (const auto& b : matrix[i]) v.bits.push_back(static_cast<std::uint8_t>(b.get<int>()));
      out.rows.push_back(std::move(v));
    }
    for (const auto& m : j.at("merges")) {
      out.merges.push_back(
          {m.at(0).get<std::size_t>(), m.at(1).get<std::size_t>(), m.at(2).get<double>(), m.at(3).get<std::size_t>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed analysis JSON: ") + e.what());
  }
  if (!out.rows.empty()) check_vectors(out.rows);
  return out;
}

HeatmapData import_heatmap_data(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read analysis from " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_heatmap_json(ss.str());
}

}  // namespace rtq
