#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "deformsplat/core_model.hpp"

namespace deformsplat {

struct Neighbor {
  std::uint32_t index;
  double distance_sq;

  /// Nearest first; equal distances resolved by the lower index.
  friend bool operator<(const Neighbor &a, const Neighbor &b) {
    return a.distance_sq != b.distance_sq ? a.distance_sq < b.distance_sq : a.index < b.index;
  }
};

/// Static kd-tree over a point set for exact k-nearest-neighbor queries.
class KdTree {
public:
  explicit KdTree(std::span<const Vec3> points);

  /// The k nearest points to points[query], excluding query itself, sorted
  /// by (distance, index). Returns fewer when the set is smaller.
  std::vector<Neighbor> nearest_excluding(std::uint32_t query, int k) const;

private:
  struct Node {
    std::uint32_t begin, end; // range in order_
    int axis = -1;            // -1 for leaves
    double split = 0.0;
    std::int32_t left = -1, right = -1;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::int32_t node, const Vec3 &q, std::uint32_t exclude, std::size_t k,
              std::vector<Neighbor> &heap) const;

  std::span<const Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Exhaustive reference for KdTree::nearest_excluding.
std::vector<Neighbor> brute_force_nearest(std::span<const Vec3> points, std::uint32_t query,
                                          int k);

} // namespace deformsplat
