#pragma once

#include <cstddef>
#include <vector>

#include "deformsplat/core_model.hpp"

namespace deformsplat {

/// Points lifted from one RGBD frame, in world coordinates.
struct DensePointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> colors;
  std::vector<DepthSource> source;
  std::vector<Eigen::Vector2i> pixel_origin;
  /// Set for points whose pixel lies in the tool-mask hole (M = 0).
  std::vector<bool> occluded;

  std::size_t size() const { return points.size(); }
};

struct BackprojectOptions {
  /// Also lift M = 0 pixels that carry filled (disparity-derived) depth.
  /// They come out flagged `occluded`.
  bool include_filled_in_mask_hole = false;
};

/// Lifts every usable pixel: X = (x - cx) D / fx, Y = (y - cy) D / fy, Z = D,
/// then maps camera coordinates to world through the inverse extrinsics.
/// Throws EmptyInitializationError when no pixel qualifies.
DensePointCloud backproject(const FrameObservation &frame, const Camera &camera,
                            const BackprojectOptions &options = {});

struct BaselineFit {
  double baseline = 0.0;
  double residual_median = 0.0;
  std::size_t overlap = 0;
};

struct BaselineSearch {
  /// Upper end of the search interval; <= 0 picks twice the largest
  /// per-pixel baseline estimate.
  double max_baseline = 0.0;
  double relative_tolerance = 1e-6;
  std::size_t min_overlap = 100;
};

/// Minimizes sum |fx * b / disparity - depth| over pixels where the
/// disparity is positive and `valid` is set, by golden-section search.
BaselineFit fit_baseline(const ImageF &disparity, const ImageF &depth, const Mask &valid,
                         double fx, const BaselineSearch &search = {});
/// Uses the frame's ground-truth depth pixels.
BaselineFit fit_baseline(const FrameObservation &frame, double fx,
                         const BaselineSearch &search = {});

/// Assigns fx * b / disparity to invalid depth pixels that have a disparity.
FrameObservation fill_depth(const FrameObservation &frame, double baseline, const Camera &camera);

struct InitConfig {
  int stride = 1;
  int sh_degree = 0;
  /// <= 0 means "max distance from the centroid" of the input points.
  double scene_extent = 0.0;
  double initial_opacity = 0.5;
  double observed_hallucination = 0.1;
  double hallucinated_hallucination = 0.9;
  int scale_neighbors = 3;
  /// Color points lifted from the mask hole by diffusing the surrounding
  /// tissue colors instead of taking the tool's color.
  bool inpaint_hole_colors = true;
};

/// Replaces pixels with known = 0 by repeated 4-neighbor averaging seeded
/// with the mean known color. Known pixels are untouched.
ImageF inpaint_masked(const ImageF &image, const Mask &known, int iterations = 500);

/// Scene extent used for clamping: max distance of any point to the centroid.
double scene_extent(std::span<const Vec3> points);

/// One isotropic Gaussian per (subsampled) point.
GaussianCloud init_cloud(const DensePointCloud &points, const InitConfig &config = {});

} // namespace deformsplat
