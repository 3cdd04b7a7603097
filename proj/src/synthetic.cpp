#include <cmath>
#include <numbers>
#include <random>

#include "deformsplat/data_io.hpp"

namespace deformsplat {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

struct Wave {
  Vec2 k;
  double phase;
  double amplitude;
};

std::vector<std::vector<Wave>> texture_waves(const SyntheticScene &s, std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<Wave>> out(3);
  const double amp = 0.35 / std::sqrt(static_cast<double>(std::max(s.texture_waves, 1)));
  for (auto &channel : out)
    for (int i = 0; i < s.texture_waves; ++i) {
      const double wl = s.texture_min_wavelength +
                        unit(rng) * (s.texture_max_wavelength - s.texture_min_wavelength);
      const double angle = unit(rng) * kTwoPi;
      channel.push_back({Vec2(std::cos(angle), std::sin(angle)) * (kTwoPi / wl),
                         unit(rng) * kTwoPi, amp * (0.5 + unit(rng))});
    }
  return out;
}

double texture(const std::vector<Wave> &waves, double x, double y) {
  double v = 0.5;
  for (const Wave &w : waves)
    v += w.amplitude * std::sin(w.k.x() * x + w.k.y() * y + w.phase);
  return std::clamp(v, 0.02, 0.98);
}

double quantize(double v, double scale) { return std::round(v * scale) / scale; }

} // namespace

void SyntheticScene::validate() const {
  if (width <= 0 || height <= 0)
    throw ConfigError("synthetic size must be positive");
  if (frames <= 0)
    throw ConfigError("synthetic frame count must be positive");
  if (!(focal > 0.0))
    throw ConfigError("synthetic focal length must be positive");
  if (texture_waves < 0 || !(texture_min_wavelength > 0.0) ||
      texture_max_wavelength < texture_min_wavelength)
    throw ConfigError("bad texture parameters");
  if (!(depth_scale > 0.0) || !(disparity_scale > 0.0) || !(baseline > 0.0))
    throw ConfigError("depth_scale, disparity_scale and baseline must be positive");
  if (color_noise < 0.0 || depth_noise < 0.0)
    throw ConfigError("noise levels must be non-negative");
  if (occluder && (bar_width <= 0 || 2 * bar_width >= width))
    throw ConfigError("occluder bar must be at least one column and cover under half the image");
  if (!(base_depth - std::abs(amplitude) > 0.05))
    throw SceneOutOfViewError("surface reaches behind the camera (base_depth - amplitude <= 0.05)");
  // Every pixel ray must cross the sheet exactly once.
  const double umax = std::max(std::abs(-0.5 * (width - 1)), 0.5 * (width - 1)) / focal;
  const double vmax = 0.5 * (height - 1) / focal;
  if (kTwoPi * std::abs(amplitude) * (std::abs(kx) * umax + std::abs(ky) * vmax) >= 1.0)
    throw SceneOutOfViewError("surface folds over along some pixel ray");
  const double max_depth = base_depth + std::abs(amplitude);
  if (max_depth * depth_scale > 65535.0)
    throw SceneOutOfViewError("surface depth exceeds the 16-bit depth range");
  if (disparity && focal * baseline / (base_depth - std::abs(amplitude)) * disparity_scale > 65535.0)
    throw SceneOutOfViewError("disparity exceeds the 16-bit range; lower disparity_scale");
}

Camera SyntheticScene::camera() const {
  Camera c;
  c.fx = c.fy = focal;
  c.cx = 0.5 * (width - 1);
  c.cy = 0.5 * (height - 1);
  c.width = width;
  c.height = height;
  return c;
}

double SyntheticScene::surface_z(double x, double y, double t) const {
  return base_depth + amplitude * std::sin(kTwoPi * (kx * x + ky * y + temporal_frequency * t));
}

std::vector<SyntheticFrame> synthesize(const SyntheticScene &scene, std::uint64_t seed) {
  scene.validate();
  std::mt19937_64 rng(seed);
  const auto waves = texture_waves(scene, rng);
  const Camera cam = scene.camera();
  std::normal_distribution<double> gauss(0.0, 1.0);

  std::vector<SyntheticFrame> out;
  for (int f = 0; f < scene.frames; ++f) {
    const double t = scene.time(f);
    const int w = scene.width, h = scene.height;
    ImageF color(w, h, 3), depth(w, h), gt_depth(w, h), disparity(w, h);
    Mask mask(w, h, 1, 1), occluded(w, h);
    const int bar_lo = static_cast<int>(std::floor(scene.bar_x + scene.bar_velocity * f));
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double u = (x - cam.cx) / cam.fx, v = (y - cam.cy) / cam.fy;
        // Bisection on s - z(u s, v s, t); the root is unique by validate().
        double lo = scene.base_depth - std::abs(scene.amplitude) - 1e-9;
        double hi = scene.base_depth + std::abs(scene.amplitude) + 1e-9;
        for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (mid == lo || mid == hi)
            break;
          (mid - scene.surface_z(u * mid, v * mid, t) < 0.0 ? lo : hi) = mid;
        }
        const double z = 0.5 * (lo + hi);
        gt_depth(x, y) = static_cast<float>(z); // the sidecar stores float32
        for (int c = 0; c < 3; ++c) {
          double value = texture(waves[c], u * z, v * z);
          if (scene.color_noise > 0.0)
            value += scene.color_noise * gauss(rng);
          color(x, y, c) = std::round(std::clamp(value, 0.0, 1.0) * 255.0) / 255.0;
        }
        double dz = z;
        if (scene.depth_noise > 0.0)
          dz += scene.depth_noise * gauss(rng);
        depth(x, y) = quantize(dz, scene.depth_scale);
        if (scene.disparity)
          disparity(x, y) = quantize(cam.fx * scene.baseline / z, scene.disparity_scale);
        if (scene.occluder && x >= bar_lo && x < bar_lo + scene.bar_width) {
          occluded(x, y) = 1;
          mask(x, y) = 0;
          depth(x, y) = 0.0;
          // Slight vertical shading so the tool is not perfectly flat.
          const double shade = 1.0 - 0.1 * static_cast<double>(y) / h;
          for (int c = 0; c < 3; ++c)
            color(x, y, c) = std::round(scene.bar_color[c] * shade * 255.0) / 255.0;
        }
      }
    SyntheticFrame frame;
    frame.observation = FrameObservation::from_rgbd(std::move(color), std::move(depth),
                                                    std::move(mask), t);
    if (scene.disparity)
      frame.observation.disparity = std::move(disparity);
    frame.truth = {std::move(gt_depth), std::move(occluded)};
    out.push_back(std::move(frame));
  }
  return out;
}

} // namespace deformsplat
