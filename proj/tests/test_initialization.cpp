#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "deformsplat/initialization.hpp"
#include "test_support.hpp"

using namespace deformsplat;

namespace {

FrameObservation constant_frame(int w, int h, double depth) {
  ImageF img(w, h, 3, 0.5);
  ImageF d(w, h, 1, depth);
  Mask m(w, h, 1, 1);
  return FrameObservation::from_rgbd(img, d, m, 0.0);
}

Camera camera_100() {
  Camera c;
  c.fx = c.fy = 100.0;
  c.cx = c.cy = 50.0;
  c.width = 200;
  c.height = 100;
  return c;
}

// Minimizer of sum_k w_k |b - b_k| with w_k = fx / disp_k: the weighted median.
double weighted_median_baseline(const ImageF &disp, const ImageF &depth, double fx) {
  std::vector<std::pair<double, double>> items;
  double total = 0.0;
  for (int y = 0; y < disp.height(); ++y)
    for (int x = 0; x < disp.width(); ++x) {
      const double w = fx / disp(x, y);
      items.emplace_back(depth(x, y) / w, w);
      total += w;
    }
  std::sort(items.begin(), items.end());
  double acc = 0.0;
  for (const auto &[b, w] : items) {
    acc += w;
    if (acc >= 0.5 * total)
      return b;
  }
  return items.back().first;
}

} // namespace

TEST_CASE("backproject examples") {
  const Camera cam = camera_100();
  FrameObservation f = constant_frame(200, 100, 1.0);
  f.depth(150, 50) = 2.0;
  f.tool_mask(10, 10) = 0;
  const DensePointCloud pc = backproject(f, cam);
  CHECK(pc.size() == 200u * 100u - 1u);
  for (std::size_t k = 0; k < pc.size(); ++k) {
    const auto px = pc.pixel_origin[k];
    CHECK_FALSE((px.x() == 10 && px.y() == 10));
    if (px == Eigen::Vector2i(50, 50))
      CHECK((pc.points[k] - Vec3(0, 0, 1)).norm() == 0.0);
    if (px == Eigen::Vector2i(150, 50))
      CHECK((pc.points[k] - Vec3(2, 0, 2)).norm() < 1e-15);
  }
}

TEST_CASE("backproject respects mask and validity and round-trips through P") {
  std::mt19937_64 rng(64);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Camera cam = testing::make_camera(64, 64, 55.0);
  cam.world_to_camera.topLeftCorner<3, 3>() =
      rotation_matrix(quat_from_axis_angle(Vec3(0.2, 1.0, -0.4), 0.6));
  cam.world_to_camera.topRightCorner<3, 1>() = Vec3(0.3, -0.7, 1.1);

  ImageF depth(64, 64);
  Mask mask(64, 64);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      depth(x, y) = u(rng) < 0.1 ? 0.0 : 0.5 + 4.0 * u(rng);
      mask(x, y) = u(rng) < 0.8;
    }
  const FrameObservation f = FrameObservation::from_rgbd(ImageF(64, 64, 3), depth, mask, 0.0);
  std::size_t expected = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      expected += mask(x, y) && depth(x, y) > 0.0;

  const DensePointCloud pc = backproject(f, cam);
  CHECK(pc.size() == expected);
  const Mat4 p = cam.projection();
  double worst_px = 0.0, worst_depth = 0.0;
  for (std::size_t k = 0; k < pc.size(); ++k) {
    const Eigen::Vector4d h = p * pc.points[k].homogeneous();
    const Vec2 pix(h[0] / h[2], h[1] / h[2]);
    worst_px = std::max(worst_px, (pix - pc.pixel_origin[k].cast<double>()).norm());
    worst_depth = std::max(
        worst_depth, std::abs(h[2] - depth(pc.pixel_origin[k].x(), pc.pixel_origin[k].y())));
  }
  CHECK(worst_px < 1e-6);
  CHECK(worst_depth < 1e-9);
}

TEST_CASE("backproject errors and hole option") {
  const Camera cam = testing::make_camera(8, 8, 10.0);
  FrameObservation f = constant_frame(8, 8, 1.0);
  for (auto &m : f.tool_mask.data())
    m = 0;
  CHECK_THROWS_AS(backproject(f, cam), EmptyInitializationError);

  f.disparity = ImageF(8, 8, 1, 5.0);
  f.depth(2, 3) = 0.0;
  f.depth_source(2, 3) = DepthSource::Invalid;
  const FrameObservation filled = fill_depth(f, 0.1, cam);
  CHECK_THROWS_AS(backproject(filled, cam), EmptyInitializationError);
  const DensePointCloud pc =
      backproject(filled, cam, BackprojectOptions{.include_filled_in_mask_hole = true});
  REQUIRE(pc.size() == 1);
  CHECK(pc.occluded[0]);
  CHECK(pc.source[0] == DepthSource::Filled);
  CHECK(pc.pixel_origin[0] == Eigen::Vector2i(2, 3));

  CHECK_THROWS_AS(backproject(f, testing::make_camera(9, 8, 10.0)), ContractError);
}

TEST_CASE("fit_baseline examples") {
  const Mask all(20, 20, 1, 1);
  SUBCASE("constant disparity") {
    const BaselineFit fit = fit_baseline(ImageF(20, 20, 1, 10.0), ImageF(20, 20, 1, 2.0), all, 100.0);
    CHECK(std::abs(fit.baseline / 0.2 - 1.0) < 1e-6);
    CHECK(fit.overlap == 400);
    CHECK(fit.residual_median < 1e-5);
  }
  SUBCASE("exact depth from a known baseline") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(2.0, 20.0);
    const double b_true = 0.0537;
    ImageF disp(20, 20), depth(20, 20);
    for (std::size_t k = 0; k < disp.data().size(); ++k) {
      disp.data()[k] = u(rng);
      depth.data()[k] = 80.0 * b_true / disp.data()[k];
    }
    CHECK(std::abs(fit_baseline(disp, depth, all, 80.0).baseline / b_true - 1.0) < 1e-6);

    // Scale consistency.
    ImageF scaled = depth;
    for (auto &v : scaled.data())
      v *= 3.7;
    const double b1 = fit_baseline(disp, depth, all, 80.0).baseline;
    const double b2 = fit_baseline(disp, scaled, all, 80.0).baseline;
    CHECK(std::abs(b2 / (3.7 * b1) - 1.0) < 1e-6);
  }
  SUBCASE("robust to outliers") {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(2.0, 20.0), coin(0.0, 1.0);
    const double b_true = 0.12;
    ImageF disp(30, 30), depth(30, 30);
    for (std::size_t k = 0; k < disp.data().size(); ++k) {
      disp.data()[k] = u(rng);
      depth.data()[k] = 100.0 * b_true / disp.data()[k];
      if (k % 10 == 3)
        depth.data()[k] *= 1.5;
    }
    const BaselineFit fit = fit_baseline(disp, depth, Mask(30, 30, 1, 1), 100.0);
    CHECK(std::abs(fit.baseline / b_true - 1.0) < 0.01);
    const double oracle = weighted_median_baseline(disp, depth, 100.0);
    CHECK(std::abs(fit.baseline / oracle - 1.0) < 1e-5);
  }
  SUBCASE("too little overlap") {
    Mask few(20, 20);
    for (int k = 0; k < 99; ++k)
      few.data()[k] = 1;
    CHECK_THROWS_AS(fit_baseline(ImageF(20, 20, 1, 10.0), ImageF(20, 20, 1, 2.0), few, 100.0),
                    InsufficientOverlapError);
  }
}

TEST_CASE("fill_depth examples") {
  const Camera cam = camera_100();
  FrameObservation f = constant_frame(4, 4, 1.5);
  Camera small = cam;
  small.width = small.height = 4;
  f.disparity = ImageF(4, 4, 1, 10.0);

  const FrameObservation same = fill_depth(f, 0.2, small);
  CHECK(same.depth == f.depth);
  CHECK(std::none_of(same.depth_source.data().begin(), same.depth_source.data().end(),
                     [](DepthSource s) { return s == DepthSource::Filled; }));

  f.depth(1, 1) = 0.0;
  f.depth_source(1, 1) = DepthSource::Invalid;
  f.depth(2, 2) = 0.0;
  f.depth_source(2, 2) = DepthSource::Invalid;
  (*f.disparity)(2, 2) = 0.0;
  const FrameObservation filled = fill_depth(f, 0.2, small);
  CHECK(filled.depth(1, 1) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(filled.depth_source(1, 1) == DepthSource::Filled);
  CHECK(filled.depth_source(2, 2) == DepthSource::Invalid);
  CHECK(filled.depth_source(0, 0) == DepthSource::GroundTruth);
  CHECK(filled.depth(0, 0) == 1.5);
  CHECK_NOTHROW(filled.validate());

  FrameObservation no_disp = constant_frame(4, 4, 1.0);
  CHECK_THROWS_AS(fill_depth(no_disp, 0.2, small), ContractError);
}

TEST_CASE("init_cloud examples") {
  DensePointCloud pc;
  for (int k = 0; k < 3; ++k) {
    pc.points.emplace_back(double(k), 0.0, 5.0);
    pc.colors.emplace_back(0.1 * k, 0.5, 0.9);
    pc.source.push_back(DepthSource::GroundTruth);
    pc.pixel_origin.emplace_back(k, 0);
    pc.occluded.push_back(false);
  }
  InitConfig cfg;
  cfg.scene_extent = 100.0;
  const GaussianCloud c = init_cloud(pc, cfg);
  REQUIRE(c.size() == 3);
  CHECK(c.scale(1).x() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(c.scale(0).x() == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(c.scale(1).y() == c.scale(1).x());
  CHECK(c.opacity(0) == doctest::Approx(0.5));
  CHECK(c.rotations[2] == quat_identity());
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(c.hallucination_logits[i] == doctest::Approx(logit(0.1)));
    CHECK((sh_to_color(0, c.sh(i), Vec3::UnitZ()) - pc.colors[i]).norm() < 1e-12);
    CHECK(c.positions[i] == pc.points[i]);
  }

  // Clamped to scene_extent / 10.
  cfg.scene_extent = 5.0;
  CHECK(init_cloud(pc, cfg).scale(1).x() == doctest::Approx(0.5));

  // Provenance drives the hallucination prior.
  pc.source[0] = DepthSource::Filled;
  pc.occluded[2] = true;
  const GaussianCloud c2 = init_cloud(pc, cfg);
  CHECK(c2.hallucination(0) == doctest::Approx(0.9));
  CHECK(c2.hallucination(1) == doctest::Approx(0.1));
  CHECK(c2.hallucination(2) == doctest::Approx(0.9));

  // Stride keeps pixels on the subsampling grid.
  cfg.stride = 2;
  CHECK(init_cloud(pc, cfg).size() == 2);

  DensePointCloud single;
  single.points = {Vec3(1, 2, 3)};
  single.colors = {Vec3(0.5, 0.5, 0.5)};
  single.source = {DepthSource::GroundTruth};
  single.pixel_origin = {Eigen::Vector2i(0, 0)};
  single.occluded = {false};
  InitConfig one;
  one.scene_extent = 2.0;
  CHECK(init_cloud(single, one).scale(0).x() == doctest::Approx(0.02));

  CHECK_THROWS_AS(init_cloud(DensePointCloud{}), EmptyInitializationError);
}
