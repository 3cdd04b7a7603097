#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "deformsplat/core_model.hpp"

namespace deformsplat {

/// Rasterizer constants. Defaults follow the usual EWA splatting setup.
struct RasterSettings {
  double near_clip = 0.01;
  /// Added to the diagonal of every screen-space covariance (px^2).
  double dilation = 0.3;
  double alpha_max = 0.99;
  double alpha_min = 1.0 / 255.0;
  int tile_size = 16;
  Vec3 background = Vec3::Zero();
};

/// A Gaussian after perspective projection to pixel space.
struct ProjectedGaussian {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  Mat2 conic = Mat2::Identity(); // cov2d^-1
  double z_camera = 0.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  double hallucination = 0.0;
  std::size_t source_index = 0;
  // Inclusive pixel bounds of the region where alpha can reach alpha_min.
  int x_min = 0, x_max = -1, y_min = 0, y_max = -1;

  bool touches_image() const { return x_min <= x_max && y_min <= y_max; }
};

struct Projection {
  std::vector<ProjectedGaussian> gaussians;
  std::size_t culled = 0;
};

/// Projects every Gaussian in front of the near plane. Culled Gaussians are
/// only counted.
Projection project(const GaussianCloud &cloud, const Camera &camera,
                   const RasterSettings &settings = {});

struct BlendRecord {
  std::uint32_t gaussian = 0; // index into RenderOutput::sorted
  std::uint32_t slot = 0;     // index into the tile's gaussian list
  double alpha = 0.0;
  double transmittance = 0.0; // product of (1 - alpha) of everything in front
  bool clamped = false;       // alpha hit alpha_max
};

struct RenderOutput {
  ImageF color;         // 3 channels
  ImageF depth;         // alpha-weighted z, not normalized by alpha
  ImageF hallucination; // alpha-weighted hallucination
  ImageF alpha;         // 1 - prod(1 - alpha_i)

  RasterSettings settings;
  /// Projected Gaussians in canonical blend order (z, then source index).
  std::vector<ProjectedGaussian> sorted;
  int tiles_x = 0;
  int tiles_y = 0;
  /// Per tile: indices into `sorted`, front to back.
  std::vector<std::vector<std::uint32_t>> tile_gaussians;
  /// Per pixel (row-major): the front-to-back records in [begin, begin + count).
  std::vector<std::size_t> record_begin;
  std::vector<std::uint32_t> record_count;
  std::vector<BlendRecord> records;

  std::span<const BlendRecord> pixel_records(int x, int y) const {
    const std::size_t p = static_cast<std::size_t>(y) * color.width() + x;
    return {records.data() + record_begin[p], record_count[p]};
  }
  double final_transmittance(int x, int y) const { return 1.0 - alpha(x, y); }
};

/// Alpha-composites color, depth and hallucination front to back.
RenderOutput render(std::span<const ProjectedGaussian> projected, const Camera &camera,
                    const RasterSettings &settings = {});
RenderOutput render(const GaussianCloud &cloud, const Camera &camera,
                    const RasterSettings &settings = {});

/// Upstream gradients of a scalar loss with respect to the render outputs.
/// Null entries are treated as zero images.
struct RenderGradients {
  const ImageF *color = nullptr;
  const ImageF *depth = nullptr;
  const ImageF *hallucination = nullptr;
  const ImageF *alpha = nullptr;
};

struct BackwardOptions {
  /// When set, the hallucination channel only reaches hallucination logits
  /// and contributes nothing to alpha (and so to geometry or opacity).
  bool detach_hallucination_geometry = false;
};

/// Gradient of sum(grad_color * C + grad_depth * D + grad_halluc * H + grad_alpha * A)
/// with respect to every cloud parameter. `output` must come from render() on
/// the same cloud and camera.
CloudGradients render_backward(const RenderOutput &output, const RenderGradients &grads,
                               const GaussianCloud &cloud, const Camera &camera,
                               const BackwardOptions &options = {});

CloudGradients render_backward(const RenderOutput &output, const ImageF &grad_color,
                               const ImageF &grad_depth, const ImageF &grad_halluc,
                               const GaussianCloud &cloud, const Camera &camera);

} // namespace deformsplat
