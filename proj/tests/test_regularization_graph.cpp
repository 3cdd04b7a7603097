#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "deformsplat/parallel.hpp"
#include "deformsplat/regularization_graph.hpp"
#include "deformsplat/spatial_index.hpp"

using namespace deformsplat;

namespace {

GaussianCloud cloud_at(std::vector<Vec3> pts) {
  GaussianCloud c = GaussianCloud::with_size(pts.size());
  c.positions = std::move(pts);
  return c;
}

} // namespace

TEST_CASE("build_graph examples") {
  SUBCASE("tiny lambda gives unit weight") {
    const auto g = build_graph(cloud_at({Vec3(0, 0, 0), Vec3(1, 0, 0)}), 1, 1e-12);
    CHECK(std::abs(g.weights(0)[0] - 1.0) < 1e-9);
  }
  SUBCASE("three collinear points") {
    const double lambda = 0.7;
    const auto g = build_graph(cloud_at({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0)}), 1, lambda);
    CHECK(g.neighbors(0)[0] == 1);
    CHECK(g.neighbors(1)[0] == 0);
    CHECK(g.neighbors(2)[0] == 1);
    CHECK(g.weights(0)[0] == std::exp(-lambda));
    CHECK(g.weights(2)[0] == std::exp(-4.0 * lambda));
    CHECK(g.base_distances(2)[0] == 2.0);
  }
  SUBCASE("coincident points") {
    const auto g = build_graph(cloud_at({Vec3(1, 2, 3), Vec3(1, 2, 3), Vec3(5, 5, 5)}), 1, 2000.0);
    CHECK(g.neighbors(0)[0] == 1);
    CHECK(g.weights(0)[0] == 1.0);
    CHECK(g.base_distances(0)[0] == 0.0);
  }
  SUBCASE("k larger than N - 1") {
    const auto g = build_graph(cloud_at({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0)}), 20, 1.0);
    CHECK(g.neighbors_per_point() == 2);
    CHECK(g.edge_count() == 6);
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(build_graph(cloud_at({Vec3(0, 0, 0)}), 3, 1.0), TooFewPointsError);
    CHECK_THROWS_AS(build_graph(cloud_at({Vec3(0, 0, 0), Vec3(1, 1, 1)}), 0, 1.0), ContractError);
    CHECK_THROWS_AS(build_graph(cloud_at({Vec3(0, 0, 0), Vec3(1, 1, 1)}), 1, 0.0), ContractError);
  }
}

TEST_CASE("kd-tree agrees with exhaustive search, including ties") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> grid(0, 6);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 4; ++trial) {
    std::vector<Vec3> pts;
    for (int k = 0; k < 700; ++k) {
      // Half on an integer lattice to force many equal distances.
      if (k % 2)
        pts.emplace_back(grid(rng), grid(rng), grid(rng));
      else
        pts.emplace_back(n(rng), n(rng), n(rng));
    }
    const KdTree tree(pts);
    for (std::uint32_t q = 0; q < pts.size(); q += 7) {
      const auto fast = tree.nearest_excluding(q, 20);
      const auto slow = brute_force_nearest(pts, q, 20);
      REQUIRE(fast.size() == slow.size());
      for (std::size_t e = 0; e < fast.size(); ++e) {
        CHECK(fast[e].index == slow[e].index);
        CHECK(fast[e].distance_sq == slow[e].distance_sq);
      }
    }
  }
}

TEST_CASE("graph invariants") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 0.05);
  std::vector<Vec3> pts;
  for (int k = 0; k < 500; ++k)
    pts.emplace_back(n(rng), n(rng), n(rng));
  const GaussianCloud cloud = cloud_at(pts);

  set_thread_count(1);
  const auto g1 = build_graph(cloud, 20, 2000.0);
  set_thread_count(4);
  const auto g2 = build_graph(cloud, 20, 2000.0);
  set_thread_count(0);
  CHECK(g1 == g2);

  for (std::size_t i = 0; i < g1.point_count(); ++i) {
    const auto nb = g1.neighbors(i);
    CHECK(nb.size() == 20);
    for (std::size_t e = 0; e < nb.size(); ++e) {
      CHECK(nb[e] != i);
      CHECK(g1.weights(i)[e] > 0.0);
      CHECK(g1.weights(i)[e] <= 1.0);
      // Mutual edges carry identical weights.
      const auto back = g1.neighbors(nb[e]);
      for (std::size_t f = 0; f < back.size(); ++f)
        if (back[f] == i)
          CHECK(g1.weights(nb[e])[f] == g1.weights(i)[e]);
    }
  }
}

TEST_CASE("graph CSV dump") {
  const auto g = build_graph(cloud_at({Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(3, 0, 0)}), 1, 1.0);
  const auto path = std::filesystem::temp_directory_path() / "deformsplat_graph.csv";
  write_graph_csv(g, path);
  std::ifstream in(path);
  std::string header, line;
  std::getline(in, header);
  CHECK(header == "i,j,distance,weight");
  int rows = 0;
  while (std::getline(in, line))
    ++rows;
  CHECK(rows == 3);
  std::filesystem::remove(path);
}
