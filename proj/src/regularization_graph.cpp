#include "deformsplat/regularization_graph.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "deformsplat/parallel.hpp"
#include "deformsplat/spatial_index.hpp"

namespace deformsplat {

RegularizationGraph build_graph(const GaussianCloud &frame0, int k, double lambda_w) {
  const std::size_t n = frame0.positions.size();
  if (n < 2)
    throw TooFewPointsError("regularization graph needs at least 2 Gaussians, got " +
                            std::to_string(n));
  if (k < 1)
    throw ContractError("graph k must be >= 1");
  if (!(lambda_w > 0.0))
    throw ContractError("graph lambda_w must be positive");

  RegularizationGraph g;
  g.point_count_ = n;
  g.k_ = k;
  g.lambda_w_ = lambda_w;
  g.per_point_ = static_cast<int>(std::min<std::size_t>(k, n - 1));
  const std::size_t per = g.per_point_;
  g.neighbors_.resize(n * per);
  g.weights_.resize(n * per);
  g.base_distances_.resize(n * per);

  const KdTree tree(frame0.positions);
  parallel_for(n, [&](std::size_t i) {
    const auto nn = tree.nearest_excluding(static_cast<std::uint32_t>(i), g.per_point_);
    for (std::size_t e = 0; e < per; ++e) {
      g.neighbors_[i * per + e] = nn[e].index;
      g.weights_[i * per + e] = std::exp(-lambda_w * nn[e].distance_sq);
      g.base_distances_[i * per + e] = std::sqrt(nn[e].distance_sq);
    }
  });
  return g;
}

void write_graph_csv(const RegularizationGraph &graph, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write graph CSV " + path.string());
  out << "i,j,distance,weight\n" << std::setprecision(17);
  for (std::size_t i = 0; i < graph.point_count(); ++i) {
    const auto nb = graph.neighbors(i);
    const auto w = graph.weights(i);
    const auto d = graph.base_distances(i);
    for (std::size_t e = 0; e < nb.size(); ++e)
      out << i << ',' << nb[e] << ',' << d[e] << ',' << w[e] << '\n';
  }
  if (!out)
    throw IoError("failed writing graph CSV " + path.string());
}

} // namespace deformsplat
