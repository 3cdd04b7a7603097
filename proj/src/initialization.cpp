#include "deformsplat/initialization.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "deformsplat/spatial_index.hpp"

namespace deformsplat {

DensePointCloud backproject(const FrameObservation &frame, const Camera &camera,
                            const BackprojectOptions &options) {
  frame.validate();
  camera.validate();
  if (frame.width() != camera.width || frame.height() != camera.height)
    throw ContractError("frame and camera dimensions differ");

  const Mat4 to_world = camera.camera_to_world();
  DensePointCloud out;
  for (int y = 0; y < frame.height(); ++y) {
    for (int x = 0; x < frame.width(); ++x) {
      if (!frame.depth_valid(x, y))
        continue;
      const bool hole = frame.tool_mask(x, y) == 0;
      if (hole && !(options.include_filled_in_mask_hole &&
                    frame.depth_source(x, y) == DepthSource::Filled))
        continue;
      const double d = frame.depth(x, y);
      const Vec3 cam((x - camera.cx) * d / camera.fx, (y - camera.cy) * d / camera.fy, d);
      out.points.push_back((to_world * cam.homogeneous()).head<3>());
      out.colors.emplace_back(frame.image(x, y, 0), frame.image(x, y, 1), frame.image(x, y, 2));
      out.source.push_back(frame.depth_source(x, y));
      out.pixel_origin.emplace_back(x, y);
      out.occluded.push_back(hole);
    }
  }
  if (out.points.empty())
    throw EmptyInitializationError("frame has no pixel with a usable mask and valid depth");
  return out;
}

// ---------------------------------------------------------------------------

BaselineFit fit_baseline(const ImageF &disparity, const ImageF &depth, const Mask &valid,
                         double fx, const BaselineSearch &search) {
  require_same_shape(disparity, depth, "fit_baseline");
  require_same_shape(disparity, valid, "fit_baseline");
  if (!(fx > 0.0))
    throw ContractError("fit_baseline: focal length must be positive");

  std::vector<double> inv_disp, target;
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x)
      if (valid(x, y) && disparity(x, y) > 0.0 && depth(x, y) > 0.0) {
        inv_disp.push_back(fx / disparity(x, y));
        target.push_back(depth(x, y));
      }
  if (inv_disp.size() < search.min_overlap)
    throw InsufficientOverlapError("baseline fit needs at least " +
                                   std::to_string(search.min_overlap) +
                                   " pixels with both disparity and depth, found " +
                                   std::to_string(inv_disp.size()));

  auto objective = [&](double b) {
    double s = 0.0;
    for (std::size_t k = 0; k < inv_disp.size(); ++k)
      s += std::abs(inv_disp[k] * b - target[k]);
    return s;
  };

  double hi = search.max_baseline;
  if (!(hi > 0.0)) {
    for (std::size_t k = 0; k < inv_disp.size(); ++k)
      hi = std::max(hi, target[k] / inv_disp[k]);
    hi *= 2.0;
  }
  double lo = 0.0;
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = hi - inv_phi * (hi - lo);
  double b = lo + inv_phi * (hi - lo);
  double fa = objective(a), fb = objective(b);
  while (hi - lo > search.relative_tolerance * 0.5 * (hi + lo)) {
    if (fa <= fb) {
      hi = b;
      b = a;
      fb = fa;
      a = hi - inv_phi * (hi - lo);
      fa = objective(a);
    } else {
      lo = a;
      a = b;
      fa = fb;
      b = lo + inv_phi * (hi - lo);
      fb = objective(b);
    }
  }

  BaselineFit fit;
  fit.baseline = 0.5 * (lo + hi);
  fit.overlap = inv_disp.size();
  std::vector<double> residuals(inv_disp.size());
  for (std::size_t k = 0; k < inv_disp.size(); ++k)
    residuals[k] = std::abs(inv_disp[k] * fit.baseline - target[k]);
  const auto mid = residuals.begin() + residuals.size() / 2;
  std::nth_element(residuals.begin(), mid, residuals.end());
  fit.residual_median = *mid;
  return fit;
}

BaselineFit fit_baseline(const FrameObservation &frame, double fx, const BaselineSearch &search) {
  if (!frame.disparity)
    throw ContractError("fit_baseline: frame has no disparity map");
  Mask valid(frame.width(), frame.height());
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x)
      valid(x, y) = frame.depth_source(x, y) == DepthSource::GroundTruth;
  return fit_baseline(*frame.disparity, frame.depth, valid, fx, search);
}

FrameObservation fill_depth(const FrameObservation &frame, double baseline, const Camera &camera) {
  if (!frame.disparity)
    throw ContractError("fill_depth: frame has no disparity map");
  if (!(baseline > 0.0))
    throw ContractError("fill_depth: baseline must be positive");
  FrameObservation out = frame;
  const ImageF &disp = *frame.disparity;
  for (int y = 0; y < frame.height(); ++y)
    for (int x = 0; x < frame.width(); ++x)
      if (frame.depth_source(x, y) == DepthSource::Invalid && disp(x, y) > 0.0) {
        out.depth(x, y) = camera.fx * baseline / disp(x, y);
        out.depth_source(x, y) = DepthSource::Filled;
      }
  return out;
}

// ---------------------------------------------------------------------------

double scene_extent(std::span<const Vec3> points) {
  if (points.empty())
    return 0.0;
  Vec3 centroid = Vec3::Zero();
  for (const auto &p : points)
    centroid += p;
  centroid /= static_cast<double>(points.size());
  double r = 0.0;
  for (const auto &p : points)
    r = std::max(r, (p - centroid).norm());
  return r;
}

ImageF inpaint_masked(const ImageF &image, const Mask &known, int iterations) {
  require_same_shape(image, known, "inpaint_masked");
  const int w = image.width(), h = image.height(), ch = image.channels();
  std::vector<double> mean(ch, 0.0);
  std::size_t count = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (known(x, y)) {
        ++count;
        for (int c = 0; c < ch; ++c)
          mean[c] += image(x, y, c);
      }
  if (count == 0)
    throw EmptyInitializationError("inpaint_masked: no known pixel");
  ImageF out = image;
  std::vector<std::pair<int, int>> holes;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (!known(x, y)) {
        holes.emplace_back(x, y);
        for (int c = 0; c < ch; ++c)
          out(x, y, c) = mean[c] / static_cast<double>(count);
      }
  ImageF next = out;
  for (int it = 0; it < iterations && !holes.empty(); ++it) {
    for (auto [x, y] : holes)
      for (int c = 0; c < ch; ++c) {
        double s = 0.0;
        int n = 0;
        for (auto [dx, dy] : {std::pair{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
          const int nx = x + dx, ny = y + dy;
          if (nx >= 0 && ny >= 0 && nx < w && ny < h) {
            s += out(nx, ny, c);
            ++n;
          }
        }
        next(x, y, c) = s / n;
      }
    std::swap(out, next);
  }
  return out;
}

GaussianCloud init_cloud(const DensePointCloud &input, const InitConfig &config) {
  if (input.size() == 0)
    throw EmptyInitializationError("cannot initialize from an empty point cloud");
  if (config.stride < 1)
    throw ContractError("init stride must be >= 1");

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const auto &px = input.pixel_origin[i];
    if (px.x() % config.stride == 0 && px.y() % config.stride == 0)
      keep.push_back(i);
  }
  if (keep.empty())
    throw EmptyInitializationError("stride subsampling removed every point");

  std::vector<Vec3> pts(keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k)
    pts[k] = input.points[keep[k]];
  double extent = config.scene_extent > 0.0 ? config.scene_extent : scene_extent(pts);
  if (!(extent > 0.0))
    extent = 1.0;

  GaussianCloud cloud = GaussianCloud::with_size(keep.size(), config.sh_degree);
  const KdTree tree(pts);
  const double lo = 1e-4, hi = extent / 10.0;
  const double opacity = logit(config.initial_opacity);
  const double observed = logit(config.observed_hallucination);
  const double hallucinated = logit(config.hallucinated_hallucination);
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const std::size_t i = keep[k];
    cloud.positions[k] = pts[k];
    const auto nn = tree.nearest_excluding(static_cast<std::uint32_t>(k), config.scale_neighbors);
    double scale = extent / 100.0;
    if (!nn.empty()) {
      double sum = 0.0;
      for (const auto &n : nn)
        sum += std::sqrt(n.distance_sq);
      scale = std::clamp(sum / static_cast<double>(nn.size()), lo, std::max(lo, hi));
    }
    cloud.log_scales[k] = Vec3::Constant(std::log(scale));
    cloud.opacity_logits[k] = opacity;
    cloud.sh(k)[0] = rgb_to_sh0(input.colors[i]);
    const bool unobserved = input.source[i] == DepthSource::Filled || input.occluded[i];
    cloud.hallucination_logits[k] = unobserved ? hallucinated : observed;
  }
  return cloud;
}

} // namespace deformsplat
