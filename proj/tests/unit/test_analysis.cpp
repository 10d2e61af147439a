#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "rtq/analysis.hpp"
#include "rtq/error.hpp"

using namespace rtq;

namespace {

MethodVector mv(std::string name, std::vector<std::uint8_t> bits) { return {std::move(name), std::move(bits)}; }

std::vector<MethodVector> random_methods(std::size_t count, std::size_t n, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(0.5);
  std::vector<MethodVector> out;
  for (std::size_t i = 0; i < count; ++i) {
    MethodVector v{"m" + std::to_string(i), {}};
    for (std::size_t j = 0; j < n; ++j) v.bits.push_back(coin(rng) ? 1 : 0);
    out.push_back(std::move(v));
  }
  return out;
}

struct OracleMerge {
  std::set<std::size_t> a, b;
  double distance;
};

// Average linkage recomputed from leaf distances at every step.
std::vector<OracleMerge> naive_average_linkage(const std::vector<MethodVector>& v, bool* tie_free = nullptr) {
  std::vector<std::set<std::size_t>> clusters;
  for (std::size_t i = 0; i < v.size(); ++i) clusters.push_back({i});
  auto link = [&](const std::set<std::size_t>& x, const std::set<std::size_t>& y) {
    double s = 0.0;
    for (auto i : x) {
      for (auto j : y) {
        std::size_t d = 0;
        for (std::size_t k = 0; k < v[i].bits.size(); ++k) d += v[i].bits[k] != v[j].bits[k];
        s += static_cast<double>(d);
      }
    }
    return s / static_cast<double>(x.size() * y.size());
  };
  if (tie_free) *tie_free = true;
  std::vector<OracleMerge> out;
  while (clusters.size() > 1) {
    std::vector<std::tuple<double, std::size_t, std::size_t>> pairs;
    for (std::size_t x = 0; x < clusters.size(); ++x) {
      for (std::size_t y = x + 1; y < clusters.size(); ++y) pairs.emplace_back(link(clusters[x], clusters[y]), x, y);
    }
    std::sort(pairs.begin(), pairs.end());
    if (tie_free && pairs.size() > 1 && std::get<0>(pairs[1]) - std::get<0>(pairs[0]) < 1e-9) *tie_free = false;
    const auto [d, x, y] = pairs.front();
    out.push_back({clusters[x], clusters[y], d});
    std::set<std::size_t> merged = clusters[x];
    merged.insert(clusters[y].begin(), clusters[y].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(y));
    clusters[x] = merged;
  }
  return out;
}

std::vector<std::set<std::size_t>> merge_members(const Dendrogram& d, std::size_t n) {
  std::vector<std::set<std::size_t>> members(2 * n - 1);
  for (std::size_t i = 0; i < n; ++i) members[i] = {i};
  for (const auto& m : d.merges) {
    members[m.id] = members[m.a];
    members[m.id].insert(members[m.b].begin(), members[m.b].end());
  }
  return members;
}

std::filesystem::path temp_file(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("agreement and hamming distance examples") {
  const auto a = mv("a", {1, 0, 1, 1}), b = mv("b", {1, 1, 1, 0}), c = mv("c", {0, 1, 0, 0});
  CHECK(agreement(a, b) == 2);
  CHECK(hamming_distance(a, b) == 2);
  CHECK(agreement(a, a) == 4);
  CHECK(hamming_distance(a, a) == 0);
  CHECK(agreement(a, c) == 0);
  CHECK_THROWS_AS(agreement(a, mv("d", {1, 0})), ParameterError);
  CHECK_THROWS_AS(hamming_distance(a, mv("d", {1, 0})), ParameterError);
}

TEST_CASE("hamming distance is a metric") {
  std::mt19937_64 rng(42);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 1 + static_cast<std::size_t>(t % 37);
    const auto v = random_methods(3, n, rng);
    const auto dxy = hamming_distance(v[0], v[1]), dyz = hamming_distance(v[1], v[2]), dxz = hamming_distance(v[0], v[2]);
    CHECK(dxz <= dxy + dyz);
    CHECK(dxy == hamming_distance(v[1], v[0]));
    CHECK(agreement(v[0], v[1]) + dxy == n);
    CHECK((dxy == 0) == (v[0].bits == v[1].bits));
  }
}

TEST_CASE("two methods give one merge") {
  const std::vector<MethodVector> v{mv("x", {1, 0, 1}), mv("y", {0, 0, 0})};
  const auto d = cluster_methods(v);
  REQUIRE(d.merges.size() == 1);
  CHECK(d.merges[0].a == 0);
  CHECK(d.merges[0].b == 1);
  CHECK(d.merges[0].distance == 2.0);
  CHECK(d.merges[0].id == 2);
  CHECK(d.leaf_order == std::vector<std::size_t>{0, 1});
}

TEST_CASE("identical pairs merge first at distance zero") {
  const std::vector<MethodVector> v{mv("a", {1, 1, 0, 0}), mv("b", {0, 0, 1, 1}), mv("c", {1, 1, 0, 0}),
                                    mv("d", {0, 0, 1, 1})};
  const auto d = cluster_methods(v);
  REQUIRE(d.merges.size() == 3);
  CHECK(d.merges[0].distance == 0.0);
  CHECK(d.merges[1].distance == 0.0);
  CHECK(std::pair(d.merges[0].a, d.merges[0].b) == std::pair<std::size_t, std::size_t>(0, 2));
  CHECK(std::pair(d.merges[1].a, d.merges[1].b) == std::pair<std::size_t, std::size_t>(1, 3));
  CHECK(d.merges[2].distance == 4.0);
  CHECK(d.leaf_order == std::vector<std::size_t>{0, 2, 1, 3});
  CHECK(d.monotone);
}

TEST_CASE("two blocks split at the top") {
  // Block A near all-zero, block B near ones on eight columns.
  std::vector<std::uint8_t> zero(12, 0), ones(12, 0);
  for (std::size_t i = 4; i < 12; ++i) ones[i] = 1;
  auto flip = [](std::vector<std::uint8_t> b, std::size_t i) {
    b[i] ^= 1;
    return b;
  };
  const std::vector<MethodVector> v{mv("a0", zero),          mv("b0", ones),          mv("a1", flip(zero, 0)),
                                    mv("b1", flip(ones, 2)), mv("a2", flip(zero, 1)), mv("b2", flip(ones, 3))};
  CHECK(hamming_distance(v[0], v[2]) == 1);
  CHECK(hamming_distance(v[0], v[1]) == 8);
  const auto d = cluster_methods(v);
  const auto oracle = naive_average_linkage(v);
  const auto members = merge_members(d, v.size());
  REQUIRE(d.merges.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(d.merges[i].distance == doctest::Approx(oracle[i].distance).epsilon(1e-12));
    std::set<std::set<std::size_t>> got{members[d.merges[i].a], members[d.merges[i].b]}, want{oracle[i].a, oracle[i].b};
    CHECK(got == want);
  }
  const auto& top = d.merges.back();
  std::set<std::set<std::size_t>> split{members[top.a], members[top.b]};
  CHECK(split == std::set<std::set<std::size_t>>{{0, 2, 4}, {1, 3, 5}});
  const auto flat = flat_clusters(v, d, 5.0);
  CHECK(flat == std::vector<std::vector<std::string>>{{"a0", "a1", "a2"}, {"b0", "b1", "b2"}});
  CHECK(d.monotone);
  CHECK(d.diagnostics.empty());
}

TEST_CASE("clustering matches the naive oracle and is order invariant") {
  std::mt19937_64 rng(7);
  std::size_t tie_free_instances = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t count = 2 + static_cast<std::size_t>(t % 7);
    auto v = random_methods(count, 40 + static_cast<std::size_t>(t % 50), rng);
    bool tie_free = false;
    const auto oracle = naive_average_linkage(v, &tie_free);
    const auto d = cluster_methods(v);
    REQUIRE(d.merges.size() == count - 1);
    CHECK(d.leaf_order.size() == count);
    CHECK(std::set<std::size_t>(d.leaf_order.begin(), d.leaf_order.end()).size() == count);
    CHECK(d.monotone);
    for (std::size_t i = 0; i < d.merges.size(); ++i) CHECK(d.merges[i].id == count + i);
    // Tie-breaking differs between the two, so sequences are compared only without ties.
    if (!tie_free) continue;
    ++tie_free_instances;
    const auto members = merge_members(d, count);
    for (std::size_t i = 0; i < d.merges.size(); ++i) {
      CHECK(d.merges[i].distance == doctest::Approx(oracle[i].distance).epsilon(1e-9));
      std::set<std::set<std::size_t>> got{members[d.merges[i].a], members[d.merges[i].b]};
      CHECK(got == std::set<std::set<std::size_t>>{oracle[i].a, oracle[i].b});
    }
    std::vector<std::size_t> perm(count);
    for (std::size_t i = 0; i < count; ++i) perm[i] = i;
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<MethodVector> shuffled;
    for (auto i : perm) shuffled.push_back(v[i]);
    const auto e = cluster_methods(shuffled);
    for (const auto& m : d.merges) CHECK(flat_clusters(v, d, m.distance) == flat_clusters(shuffled, e, m.distance));
  }
  CHECK(tie_free_instances >= 50);
}

TEST_CASE("clustering input errors") {
  CHECK_THROWS_AS(cluster_methods({mv("a", {1})}), ParameterError);
  CHECK_THROWS_AS(cluster_methods({mv("a", {1, 0}), mv("b", {1})}), ParameterError);
  CHECK_THROWS_AS(cluster_methods({mv("", {1}), mv("b", {1})}), ValidationError);
  CHECK_THROWS_AS(cluster_methods({mv("a", {1}), mv("a", {0})}), ValidationError);
  CHECK_THROWS_AS(cluster_methods({mv("a", {2}), mv("b", {0})}), ValidationError);
}

TEST_CASE("prediction records") {
  const auto v = parse_predictions("method,sample_id,correct\nA,10,1\nA,2,0\nB,2,1\nB,10,1\n\nA,3,1\nB,3,0\n");
  REQUIRE(v.size() == 2);
  CHECK(v[0].name == "A");
  CHECK(v[0].bits == std::vector<std::uint8_t>{0, 1, 1});
  CHECK(v[1].bits == std::vector<std::uint8_t>{1, 0, 1});
  const auto lex = parse_predictions("A,q10,1\nA,q2,0\n");
  CHECK(lex[0].bits == std::vector<std::uint8_t>{1, 0});
  CHECK_THROWS_AS(parse_predictions("A,1,1\nB,2,1\n"), ValidationError);
  CHECK_THROWS_AS(parse_predictions("A,1,2\n"), ValidationError);
  CHECK_THROWS_AS(parse_predictions("A,1\n"), ValidationError);
  CHECK_THROWS_AS(parse_predictions(",1,1\n"), ValidationError);
  CHECK_THROWS_AS(parse_predictions("A,1,1\nA,1,0\n"), ValidationError);
  CHECK_THROWS_AS(parse_predictions(""), ValidationError);
  CHECK_THROWS_AS(load_predictions(temp_file("rtq_missing_dir") / "none.csv"), IoError);
}

TEST_CASE("heatmap export") {
  const std::vector<MethodVector> v{mv("wide", {1, 0, 1}), mv("narrow", {0, 0, 0})};
  const auto d = cluster_methods(v);
  const auto path = temp_file("rtq_heatmap_test.json");
  export_heatmap_data(v, d, path);
  const auto back = import_heatmap_data(path);
  REQUIRE(back.rows.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back.rows[i].name == v[d.leaf_order[i]].name);
    CHECK(back.rows[i].bits == v[d.leaf_order[i]].bits);
  }
  REQUIRE(back.merges.size() == 1);
  CHECK(back.merges[0].distance == 2.0);
  std::filesystem::remove(path);

  std::mt19937_64 rng(3);
  const auto many = random_methods(7, 25, rng);
  const auto dm = cluster_methods(many);
  const auto parsed = parse_heatmap_json(heatmap_json(many, dm));
  for (std::size_t i = 0; i < many.size(); ++i) CHECK(parsed.rows[i].bits == many[dm.leaf_order[i]].bits);
  for (std::size_t i = 0; i < dm.merges.size(); ++i) {
    CHECK(parsed.merges[i].a == dm.merges[i].a);
    CHECK(parsed.merges[i].b == dm.merges[i].b);
    CHECK(parsed.merges[i].distance == dm.merges[i].distance);
    CHECK(parsed.merges[i].id == dm.merges[i].id);
  }

  const std::vector<MethodVector> unnamed{mv("", {1, 0, 1}), mv("b", {0, 0, 0})};
  CHECK_THROWS_AS(heatmap_json(unnamed, d), ValidationError);
  CHECK_THROWS_AS(export_heatmap_data(v, d, temp_file("rtq_no_such_dir") / "x" / "out.json"), IoError);
  CHECK_THROWS_AS(parse_heatmap_json("{\"methods\": [\"a\"]}"), ValidationError);
  CHECK_THROWS_AS(parse_heatmap_json("not json"), ValidationError);
}
