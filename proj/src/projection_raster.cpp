#include "deformsplat/projection_raster.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "deformsplat/parallel.hpp"

namespace deformsplat {

namespace {

// Camera-space point and the affine projection Jacobian at that point.
struct LocalProjection {
  Vec3 t;
  Eigen::Matrix<double, 2, 3> jacobian;
};

LocalProjection local_projection(const Camera &camera, const Vec3 &t) {
  LocalProjection lp;
  lp.t = t;
  const double inv_z = 1.0 / t.z();
  lp.jacobian << camera.fx * inv_z, 0.0, -camera.fx * t.x() * inv_z * inv_z, 0.0,
      camera.fy * inv_z, -camera.fy * t.y() * inv_z * inv_z;
  return lp;
}

Vec3 view_direction(const Vec3 &position, const Vec3 &camera_center) {
  const Vec3 d = position - camera_center;
  const double n = d.norm();
  return n > 0.0 ? Vec3(d / n) : Vec3(0.0, 0.0, 1.0);
}

void compute_bounds(ProjectedGaussian &g, const RasterSettings &s, int width, int height) {
  g.x_min = 0;
  g.x_max = -1;
  g.y_min = 0;
  g.y_max = -1;
  const double peak = std::min(g.opacity, s.alpha_max);
  if (!(peak >= s.alpha_min))
    return;
  // alpha >= alpha_min  <=>  d^T conic d <= 2 ln(opacity / alpha_min); the
  // axis-aligned box of that ellipse has half-extents sqrt(q * cov_ii).
  const double q = 2.0 * std::log(g.opacity / s.alpha_min);
  const double ex = std::sqrt(q * g.cov2d(0, 0));
  const double ey = std::sqrt(q * g.cov2d(1, 1));
  g.x_min = std::max(0, static_cast<int>(std::ceil(g.mean2d.x() - ex)));
  g.x_max = std::min(width - 1, static_cast<int>(std::floor(g.mean2d.x() + ex)));
  g.y_min = std::max(0, static_cast<int>(std::ceil(g.mean2d.y() - ey)));
  g.y_max = std::min(height - 1, static_cast<int>(std::floor(g.mean2d.y() + ey)));
}

bool canonical_less(const ProjectedGaussian &a, const ProjectedGaussian &b) {
  if (a.z_camera != b.z_camera)
    return a.z_camera < b.z_camera;
  return a.source_index < b.source_index;
}

} // namespace

Projection project(const GaussianCloud &cloud, const Camera &camera,
                   const RasterSettings &settings) {
  cloud.validate();
  camera.validate();
  const Mat3 w3 = camera.rotation();
  const Vec3 center = camera.center();
  const std::size_t n = cloud.size();

  std::vector<ProjectedGaussian> all(n);
  std::vector<char> visible(n, 0);
  parallel_for(n, [&](std::size_t i) {
    const Vec3 t = camera.to_camera(cloud.positions[i]);
    if (!(t.z() > settings.near_clip))
      return;
    const LocalProjection lp = local_projection(camera, t);
    const Eigen::Matrix<double, 2, 3> m = lp.jacobian * w3;
    ProjectedGaussian &g = all[i];
    g.mean2d = Vec2(camera.fx * t.x() / t.z() + camera.cx, camera.fy * t.y() / t.z() + camera.cy);
    g.cov2d = m * covariance(cloud.rotations[i], cloud.log_scales[i]) * m.transpose();
    g.cov2d(0, 1) = g.cov2d(1, 0) = 0.5 * (g.cov2d(0, 1) + g.cov2d(1, 0));
    g.cov2d += settings.dilation * Mat2::Identity();
    g.z_camera = t.z();
    g.color = sh_to_color(cloud.sh_degree, cloud.sh(i), view_direction(cloud.positions[i], center));
    g.opacity = cloud.opacity(i);
    g.hallucination = cloud.hallucination(i);
    g.source_index = i;
    visible[i] = 1;
  });

  Projection out;
  out.gaussians.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (visible[i])
      out.gaussians.push_back(all[i]);
    else
      ++out.culled;
  }
  return out;
}

RenderOutput render(std::span<const ProjectedGaussian> projected, const Camera &camera,
                    const RasterSettings &settings) {
  camera.validate();
  const int width = camera.width;
  const int height = camera.height;
  const int ts = settings.tile_size;

  RenderOutput out;
  out.settings = settings;
  out.color = ImageF(width, height, 3);
  out.depth = ImageF(width, height, 1);
  out.hallucination = ImageF(width, height, 1);
  out.alpha = ImageF(width, height, 1);
  out.tiles_x = (width + ts - 1) / ts;
  out.tiles_y = (height + ts - 1) / ts;
  const std::size_t tile_count = static_cast<std::size_t>(out.tiles_x) * out.tiles_y;

  out.sorted.assign(projected.begin(), projected.end());
  std::sort(out.sorted.begin(), out.sorted.end(), canonical_less);
  for (auto &g : out.sorted) {
    const double det = g.cov2d.determinant();
    if (!(det > 0.0) || !(g.cov2d(0, 0) > 0.0) || !std::isfinite(det))
      throw DegenerateCovarianceError("screen-space covariance of Gaussian " +
                                      std::to_string(g.source_index) +
                                      " is not positive definite");
    g.conic = g.cov2d.inverse();
    g.conic(0, 1) = g.conic(1, 0);
    compute_bounds(g, settings, width, height);
  }

  out.tile_gaussians.assign(tile_count, {});
  for (std::size_t k = 0; k < out.sorted.size(); ++k) {
    const auto &g = out.sorted[k];
    if (!g.touches_image())
      continue;
    for (int ty = g.y_min / ts; ty <= g.y_max / ts; ++ty)
      for (int tx = g.x_min / ts; tx <= g.x_max / ts; ++tx)
        out.tile_gaussians[static_cast<std::size_t>(ty) * out.tiles_x + tx].push_back(
            static_cast<std::uint32_t>(k));
  }

  const std::size_t pixels = static_cast<std::size_t>(width) * height;
  out.record_begin.assign(pixels, 0);
  out.record_count.assign(pixels, 0);
  std::vector<std::vector<BlendRecord>> tile_records(tile_count);

  struct Footprint {
    double mx, my, a, b, c, opacity;
    int x_min, x_max, y_min, y_max;
  };
  parallel_for(tile_count, [&](std::size_t tile) {
    const int tx = static_cast<int>(tile % out.tiles_x);
    const int ty = static_cast<int>(tile / out.tiles_x);
    const auto &list = out.tile_gaussians[tile];
    auto &recs = tile_records[tile];
    std::vector<Footprint> fp(list.size());
    for (std::size_t slot = 0; slot < list.size(); ++slot) {
      const ProjectedGaussian &g = out.sorted[list[slot]];
      fp[slot] = {g.mean2d.x(), g.mean2d.y(), g.conic(0, 0), g.conic(0, 1), g.conic(1, 1),
                  g.opacity,    g.x_min,      g.x_max,      g.y_min,      g.y_max};
    }
    std::vector<std::uint32_t> row;
    for (int y = ty * ts; y < std::min(height, (ty + 1) * ts); ++y) {
      // Slots whose footprint crosses this row, still in depth order.
      row.clear();
      for (std::uint32_t slot = 0; slot < fp.size(); ++slot)
        if (y >= fp[slot].y_min && y <= fp[slot].y_max)
          row.push_back(slot);
      for (int x = tx * ts; x < std::min(width, (tx + 1) * ts); ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * width + x;
        out.record_begin[p] = recs.size();
        double transmittance = 1.0;
        double c0 = 0.0, c1 = 0.0, c2 = 0.0, d = 0.0, h = 0.0;
        for (std::uint32_t slot : row) {
          const Footprint &f = fp[slot];
          if (x < f.x_min || x > f.x_max)
            continue;
          const double dx = x - f.mx;
          const double dy = y - f.my;
          const double power = -0.5 * (f.a * dx * dx + 2.0 * f.b * dx * dy + f.c * dy * dy);
          double alpha = f.opacity * std::exp(power);
          if (alpha < settings.alpha_min)
            continue;
          bool clamped = false;
          if (alpha > settings.alpha_max) {
            alpha = settings.alpha_max;
            clamped = true;
          }
          const ProjectedGaussian &g = out.sorted[list[slot]];
          const double weight = alpha * transmittance;
          c0 += weight * g.color.x();
          c1 += weight * g.color.y();
          c2 += weight * g.color.z();
          d += weight * g.z_camera;
          h += weight * g.hallucination;
          recs.push_back({list[slot], slot, alpha, transmittance, clamped});
          transmittance *= 1.0 - alpha;
        }
        out.record_count[p] = static_cast<std::uint32_t>(recs.size() - out.record_begin[p]);
        out.color(x, y, 0) = c0 + transmittance * settings.background.x();
        out.color(x, y, 1) = c1 + transmittance * settings.background.y();
        out.color(x, y, 2) = c2 + transmittance * settings.background.z();
        out.depth(x, y) = d;
        out.hallucination(x, y) = h;
        out.alpha(x, y) = 1.0 - transmittance;
      }
    }
  });

  std::vector<std::size_t> tile_base(tile_count, 0);
  std::size_t total = 0;
  for (std::size_t t = 0; t < tile_count; ++t) {
    tile_base[t] = total;
    total += tile_records[t].size();
  }
  out.records.resize(total);
  for (std::size_t t = 0; t < tile_count; ++t)
    std::copy(tile_records[t].begin(), tile_records[t].end(), out.records.begin() + tile_base[t]);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t tile = static_cast<std::size_t>(y / ts) * out.tiles_x + x / ts;
      out.record_begin[static_cast<std::size_t>(y) * width + x] += tile_base[tile];
    }
  return out;
}

RenderOutput render(const GaussianCloud &cloud, const Camera &camera,
                    const RasterSettings &settings) {
  const Projection p = project(cloud, camera, settings);
  return render(p.gaussians, camera, settings);
}

// ---------------------------------------------------------------------------

namespace {

// Gradient of the loss with respect to one projected Gaussian's screen-space
// quantities.
struct ScreenGrad {
  double mean_x = 0, mean_y = 0;
  double conic_xx = 0, conic_xy = 0, conic_yy = 0; // per entry of the full 2x2 matrix
  double opacity = 0;
  double r = 0, g = 0, b = 0;
  double depth = 0;
  double halluc = 0;

  void operator+=(const ScreenGrad &o) {
    mean_x += o.mean_x;
    mean_y += o.mean_y;
    conic_xx += o.conic_xx;
    conic_xy += o.conic_xy;
    conic_yy += o.conic_yy;
    opacity += o.opacity;
    r += o.r;
    g += o.g;
    b += o.b;
    depth += o.depth;
    halluc += o.halluc;
  }
};

double pixel_value(const ImageF *img, int x, int y, int c = 0) {
  return img ? (*img)(x, y, c) : 0.0;
}

void check_grad_shape(const ImageF *img, int w, int h, int channels, const char *name) {
  if (img && (!img->same_shape(w, h) || img->channels() != channels))
    throw ContractError(std::string("render_backward: ") + name +
                        " gradient has the wrong shape");
}

} // namespace

CloudGradients render_backward(const RenderOutput &output, const RenderGradients &grads,
                               const GaussianCloud &cloud, const Camera &camera,
                               const BackwardOptions &options) {
  const int width = output.color.width();
  const int height = output.color.height();
  if (camera.width != width || camera.height != height)
    throw ContractError("render_backward: camera does not match the render");
  check_grad_shape(grads.color, width, height, 3, "color");
  check_grad_shape(grads.depth, width, height, 1, "depth");
  check_grad_shape(grads.hallucination, width, height, 1, "hallucination");
  check_grad_shape(grads.alpha, width, height, 1, "alpha");
  cloud.validate();
  for (const auto &g : output.sorted)
    if (g.source_index >= cloud.size())
      throw ContractError("render_backward: render does not belong to this cloud");

  const int ts = output.settings.tile_size;
  const Vec3 &bg = output.settings.background;
  const std::size_t tile_count = output.tile_gaussians.size();
  const bool detach = options.detach_hallucination_geometry;

  std::vector<std::vector<ScreenGrad>> tile_grads(tile_count);
  parallel_for(tile_count, [&](std::size_t tile) {
    const auto &list = output.tile_gaussians[tile];
    auto &acc = tile_grads[tile];
    acc.assign(list.size(), ScreenGrad{});
    const int tx = static_cast<int>(tile % output.tiles_x);
    const int ty = static_cast<int>(tile / output.tiles_x);
    for (int y = ty * ts; y < std::min(height, (ty + 1) * ts); ++y) {
      for (int x = tx * ts; x < std::min(width, (tx + 1) * ts); ++x) {
        const auto recs = output.pixel_records(x, y);
        if (recs.empty())
          continue;
        const double gr = pixel_value(grads.color, x, y, 0);
        const double gg = pixel_value(grads.color, x, y, 1);
        const double gb = pixel_value(grads.color, x, y, 2);
        const double gd = pixel_value(grads.depth, x, y);
        const double gh = pixel_value(grads.hallucination, x, y);
        const double ga = pixel_value(grads.alpha, x, y);
        const double t_final = output.final_transmittance(x, y);

        // Running sums of what lies behind the current record.
        double sr = t_final * bg.x(), sg = t_final * bg.y(), sb = t_final * bg.z();
        double sd = 0.0, sh = 0.0;
        for (std::size_t k = recs.size(); k-- > 0;) {
          const BlendRecord &rec = recs[k];
          const ProjectedGaussian &g = output.sorted[rec.gaussian];
          ScreenGrad &out = acc[rec.slot];
          const double a = rec.alpha;
          const double t = rec.transmittance;
          const double w = a * t;
          out.r += gr * w;
          out.g += gg * w;
          out.b += gb * w;
          out.depth += gd * w;
          out.halluc += gh * w;

          const double inv = 1.0 / (1.0 - a);
          double dalpha = gr * (g.color.x() * t - sr * inv) + gg * (g.color.y() * t - sg * inv) +
                          gb * (g.color.z() * t - sb * inv) + gd * (g.z_camera * t - sd * inv) +
                          ga * t_final * inv;
          if (!detach)
            dalpha += gh * (g.hallucination * t - sh * inv);

          sr += g.color.x() * w;
          sg += g.color.y() * w;
          sb += g.color.z() * w;
          sd += g.z_camera * w;
          sh += g.hallucination * w;

          if (rec.clamped || dalpha == 0.0)
            continue;
          // alpha = opacity * exp(-q / 2), q = d^T conic d, d = pixel - mean.
          const double dx = x - g.mean2d.x();
          const double dy = y - g.mean2d.y();
          const double gauss = a / g.opacity;
          out.opacity += dalpha * gauss;
          const double dq = -0.5 * a * dalpha; // dL/dq
          out.conic_xx += dq * dx * dx;
          out.conic_xy += dq * dx * dy;
          out.conic_yy += dq * dy * dy;
          // dq/dmean = -2 conic d
          out.mean_x += dq * -2.0 * (g.conic(0, 0) * dx + g.conic(0, 1) * dy);
          out.mean_y += dq * -2.0 * (g.conic(0, 1) * dx + g.conic(1, 1) * dy);
        }
      }
    }
  });

  std::vector<ScreenGrad> screen(output.sorted.size());
  for (std::size_t tile = 0; tile < tile_count; ++tile) {
    const auto &list = output.tile_gaussians[tile];
    for (std::size_t s = 0; s < list.size(); ++s)
      screen[list[s]] += tile_grads[tile][s];
  }

  CloudGradients result = CloudGradients::zeros_like(cloud);
  const Mat3 w3 = camera.rotation();
  const Vec3 center = camera.center();
  parallel_for(output.sorted.size(), [&](std::size_t k) {
    const ProjectedGaussian &pg = output.sorted[k];
    const ScreenGrad &sg = screen[k];
    const std::size_t i = pg.source_index;

    // Appearance.
    const double o = pg.opacity;
    result.opacity_logits[i] = sg.opacity * o * (1.0 - o);
    const double h = pg.hallucination;
    result.hallucination_logits[i] = sg.halluc * h * (1.0 - h);
    const Vec3 &mu = cloud.positions[i];
    const Vec3 d = mu - center;
    const double dn = d.norm();
    const Vec3 dir = dn > 0.0 ? Vec3(d / dn) : Vec3(0.0, 0.0, 1.0);
    const auto n_coeffs = static_cast<std::size_t>(cloud.coeffs_per_gaussian());
    std::span<Vec3> grad_sh(result.sh_coeffs.data() + i * n_coeffs, n_coeffs);
    const Vec3 grad_dir =
        sh_to_color_backward(cloud.sh_degree, cloud.sh(i), dir, Vec3(sg.r, sg.g, sg.b), grad_sh);
    Vec3 grad_mu = Vec3::Zero();
    if (cloud.sh_degree > 0 && dn > 0.0)
      grad_mu += (grad_dir - dir * dir.dot(grad_dir)) / dn;

    // Screen-space covariance: conic = cov2d^-1.
    Mat2 g_conic;
    g_conic << sg.conic_xx, sg.conic_xy, sg.conic_xy, sg.conic_yy;
    const Mat2 g_cov2d = -pg.conic * g_conic * pg.conic;

    const Vec3 t = camera.to_camera(mu);
    const LocalProjection lp = local_projection(camera, t);
    const Eigen::Matrix<double, 2, 3> m = lp.jacobian * w3;
    const Mat3 rot = rotation_matrix(cloud.rotations[i]);
    const Vec3 scale = cloud.log_scales[i].array().exp();
    const Mat3 nmat = rot * scale.asDiagonal();
    const Mat3 sigma = nmat * nmat.transpose();

    // cov2d = M Sigma M^T + k I, M = J W3.
    const Eigen::Matrix<double, 2, 3> g_m = 2.0 * g_cov2d * m * sigma;
    const Mat3 g_sigma = m.transpose() * g_cov2d * m;
    const Eigen::Matrix<double, 2, 3> g_j = g_m * w3.transpose();

    // Sigma = N N^T, N = R S.
    const Mat3 g_n = 2.0 * g_sigma * nmat;
    const Mat3 g_rot = g_n * scale.asDiagonal();
    Vec3 g_scale;
    for (int c = 0; c < 3; ++c)
      g_scale[c] = g_n.col(c).dot(rot.col(c));
    result.log_scales[i] = g_scale.cwiseProduct(scale);
    result.rotations[i] = rotation_matrix_backward(cloud.rotations[i], g_rot);

    // Camera-space position: mean2d, z and J all depend on t.
    const double iz = 1.0 / t.z();
    const double iz2 = iz * iz;
    const double iz3 = iz2 * iz;
    const double fx = camera.fx, fy = camera.fy;
    Vec3 g_t = Vec3::Zero();
    g_t.x() += sg.mean_x * fx * iz;
    g_t.z() += sg.mean_x * -fx * t.x() * iz2;
    g_t.y() += sg.mean_y * fy * iz;
    g_t.z() += sg.mean_y * -fy * t.y() * iz2;
    g_t.z() += sg.depth;
    // J = [fx/z, 0, -fx x/z^2; 0, fy/z, -fy y/z^2]
    g_t.z() += g_j(0, 0) * -fx * iz2;
    g_t.x() += g_j(0, 2) * -fx * iz2;
    g_t.z() += g_j(0, 2) * 2.0 * fx * t.x() * iz3;
    g_t.z() += g_j(1, 1) * -fy * iz2;
    g_t.y() += g_j(1, 2) * -fy * iz2;
    g_t.z() += g_j(1, 2) * 2.0 * fy * t.y() * iz3;
    grad_mu += w3.transpose() * g_t;
    result.positions[i] = grad_mu;
  });
  return result;
}

CloudGradients render_backward(const RenderOutput &output, const ImageF &grad_color,
                               const ImageF &grad_depth, const ImageF &grad_halluc,
                               const GaussianCloud &cloud, const Camera &camera) {
  RenderGradients g;
  g.color = &grad_color;
  g.depth = &grad_depth;
  g.hallucination = &grad_halluc;
  return render_backward(output, g, cloud, camera);
}

} // namespace deformsplat
