#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "deformsplat/core_model.hpp"

namespace deformsplat {

/// Frame-0 k-nearest-neighbor graph with weights
/// w_ij = exp(-lambda_w * |mu_j0 - mu_i0|^2). Immutable once built.
class RegularizationGraph {
public:
  RegularizationGraph() = default;

  std::size_t point_count() const { return point_count_; }
  /// min(k, N - 1): every point has exactly this many neighbors.
  int neighbors_per_point() const { return per_point_; }
  int requested_k() const { return k_; }
  double lambda_w() const { return lambda_w_; }
  std::size_t edge_count() const { return neighbors_.size(); }

  std::span<const std::uint32_t> neighbors(std::size_t i) const {
    return {neighbors_.data() + i * per_point_, static_cast<std::size_t>(per_point_)};
  }
  std::span<const double> weights(std::size_t i) const {
    return {weights_.data() + i * per_point_, static_cast<std::size_t>(per_point_)};
  }
  std::span<const double> base_distances(std::size_t i) const {
    return {base_distances_.data() + i * per_point_, static_cast<std::size_t>(per_point_)};
  }

  bool operator==(const RegularizationGraph &) const = default;

  friend RegularizationGraph build_graph(const GaussianCloud &frame0, int k, double lambda_w);

private:
  std::size_t point_count_ = 0;
  int per_point_ = 0;
  int k_ = 0;
  double lambda_w_ = 0.0;
  std::vector<std::uint32_t> neighbors_;
  std::vector<double> weights_;
  std::vector<double> base_distances_;
};

/// Exact KNN on frame-0 positions; ties go to the lower index.
RegularizationGraph build_graph(const GaussianCloud &frame0, int k, double lambda_w);

/// Diagnostic dump, one `i,j,distance,weight` row per edge.
void write_graph_csv(const RegularizationGraph &graph, const std::filesystem::path &path);

} // namespace deformsplat
