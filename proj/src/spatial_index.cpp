#include "deformsplat/spatial_index.hpp"

#include <algorithm>

namespace deformsplat {

namespace {
constexpr std::uint32_t kLeafSize = 12;
}

KdTree::KdTree(std::span<const Vec3> points) : points_(points), order_(points.size()) {
  for (std::uint32_t i = 0; i < order_.size(); ++i)
    order_[i] = i;
  if (!order_.empty())
    build(0, static_cast<std::uint32_t>(order_.size()));
}

std::int32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= kLeafSize)
    return id;

  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  for (std::uint32_t k = begin; k < end; ++k) {
    lo = lo.cwiseMin(points_[order_[k]]);
    hi = hi.cwiseMax(points_[order_[k]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis])
    return id; // all coincident

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     const double pa = points_[a][axis], pb = points_[b][axis];
                     return pa != pb ? pa < pb : a < b;
                   });
  const double split = points_[order_[mid]][axis];
  const std::int32_t left = build(begin, mid);
  const std::int32_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::int32_t node_id, const Vec3 &q, std::uint32_t exclude, std::size_t k,
                    std::vector<Neighbor> &heap) const {
  const Node &node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::uint32_t s = node.begin; s < node.end; ++s) {
      const std::uint32_t idx = order_[s];
      if (idx == exclude)
        continue;
      const Neighbor cand{idx, (points_[idx] - q).squaredNorm()};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end());
      } else if (cand < heap.front()) {
        std::pop_heap(heap.begin(), heap.end());
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end());
      }
    }
    return;
  }
  const double diff = q[node.axis] - node.split;
  const std::int32_t near = diff < 0.0 ? node.left : node.right;
  const std::int32_t far = diff < 0.0 ? node.right : node.left;
  search(near, q, exclude, k, heap);
  // Points on the far side are at least |diff| away along this axis. Equal
  // distances must still be visited for the index tie-break.
  if (heap.size() < k || diff * diff <= heap.front().distance_sq)
    search(far, q, exclude, k, heap);
}

std::vector<Neighbor> KdTree::nearest_excluding(std::uint32_t query, int k) const {
  std::vector<Neighbor> heap;
  if (k <= 0 || nodes_.empty())
    return heap;
  heap.reserve(k);
  search(0, points_[query], query, static_cast<std::size_t>(k), heap);
  std::sort_heap(heap.begin(), heap.end());
  return heap;
}

std::vector<Neighbor> brute_force_nearest(std::span<const Vec3> points, std::uint32_t query,
                                          int k) {
  std::vector<Neighbor> all;
  for (std::uint32_t i = 0; i < points.size(); ++i)
    if (i != query)
      all.push_back({i, (points[i] - points[query]).squaredNorm()});
  std::sort(all.begin(), all.end());
  if (all.size() > static_cast<std::size_t>(k))
    all.resize(k);
  return all;
}

} // namespace deformsplat
