#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "deformsplat/losses.hpp"
#include "test_support.hpp"

using namespace deformsplat;

namespace {

GaussianCloud points(std::vector<Vec3> pts) {
  GaussianCloud c = GaussianCloud::with_size(pts.size());
  c.positions = std::move(pts);
  return c;
}

// Applies x -> R x + t to positions and composes rotations with R.
GaussianCloud rigidly_moved(const GaussianCloud &c, const Quat &r, const Vec3 &t) {
  GaussianCloud out = c;
  const Mat3 m = rotation_matrix(r);
  for (std::size_t i = 0; i < c.size(); ++i) {
    out.positions[i] = m * c.positions[i] + t;
    out.rotations[i] = quat_multiply(r, c.rotations[i]);
  }
  return out;
}

GaussianCloud random_points(std::mt19937_64 &rng, std::size_t n, double spread) {
  std::normal_distribution<double> g(0.0, spread);
  GaussianCloud c = GaussianCloud::with_size(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.positions[i] = Vec3(g(rng), g(rng), g(rng));
    c.rotations[i] = testing::random_quat(rng);
  }
  return c;
}

FrameObservation random_frame(std::mt19937_64 &rng, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FrameObservation f;
  f.image = testing::random_image(rng, w, h, 3, 0.0, 1.0);
  f.depth = testing::random_image(rng, w, h, 1, 2.0, 4.0);
  f.tool_mask = Mask(w, h);
  f.depth_source = Image<DepthSource>(w, h);
  f.disparity = ImageF(w, h, 1, 1.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      f.tool_mask(x, y) = u(rng) < 0.8;
      const double s = u(rng);
      f.depth_source(x, y) =
          s < 0.6 ? DepthSource::GroundTruth : (s < 0.85 ? DepthSource::Filled : DepthSource::Invalid);
      if (f.depth_source(x, y) == DepthSource::Invalid)
        f.depth(x, y) = 0.0;
    }
  return f;
}

} // namespace

TEST_CASE("image_l1 examples") {
  const ImageF a(4, 4, 3, 0.25);
  Mask m(4, 4, 1, 1);
  const ImageLoss same = image_l1(a, a, m);
  CHECK(same.value == 0.0);
  for (double g : same.grad.data())
    CHECK(g == 0.0);

  const ImageF b(4, 4, 3, 0.75);
  CHECK(image_l1(a, b, m).value == 0.5);

  // Only the left half is supervised; the right half is wildly wrong.
  ImageF c = a;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      m(x, y) = x < 2;
      if (x >= 2)
        for (int ch = 0; ch < 3; ++ch)
          c(x, y, ch) = 10.0;
    }
  const ImageLoss half = image_l1(c, a, m);
  CHECK(half.value == 0.0);
  CHECK(half.grad(3, 3, 0) == 0.0);

  CHECK_THROWS_AS(image_l1(a, a, Mask(4, 4)), EmptySupervisionError);
  CHECK_THROWS_AS(image_l1(a, ImageF(3, 4, 3), Mask(4, 4, 1, 1)), ContractError);
}

TEST_CASE("depth_l1 examples") {
  Image<DepthSource> src(2, 1);
  src(0, 0) = DepthSource::GroundTruth;
  src(1, 0) = DepthSource::Filled;
  const Mask m(2, 1, 1, 1);
  ImageF obs(2, 1, 1, 2.0), alpha(2, 1, 1, 1.0), depth(2, 1, 1, 2.3);
  CHECK(depth_l1(depth, alpha, obs, m, src, 0.1).value == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(depth_l1(obs, alpha, obs, m, src, 0.1).value == 0.0);

  // Alpha-normalized comparison.
  ImageF half_alpha(2, 1, 1, 0.8), scaled(2, 1, 1, 1.6);
  CHECK(depth_l1(scaled, half_alpha, obs, m, src, 0.1).value == doctest::Approx(0.0));

  // Low coverage pixel is ignored regardless of error.
  alpha(1, 0) = 0.4;
  depth(1, 0) = 100.0;
  const DepthLoss gated = depth_l1(depth, alpha, obs, m, src, 0.1);
  CHECK(gated.value == doctest::Approx(0.3));
  CHECK(gated.grad_depth(1, 0) == 0.0);

  alpha(0, 0) = 0.4;
  CHECK_THROWS_AS(depth_l1(depth, alpha, obs, m, src, 0.1), EmptySupervisionError);
}

TEST_CASE("depth_smoothness_huber examples") {
  const Mask all(5, 5, 1, 1);
  CHECK(depth_smoothness_huber(ImageF(5, 5, 1, 3.0), all, 0.1).value == 0.0);

  Mask pair(2, 1, 1, 1);
  ImageF d(2, 1);
  d(1, 0) = 0.05;
  CHECK(depth_smoothness_huber(d, pair, 0.1).value == doctest::Approx(0.5 * 0.05 * 0.05));
  d(1, 0) = 0.3;
  CHECK(depth_smoothness_huber(d, pair, 0.1).value == doctest::Approx(0.1 * (0.3 - 0.05)));
  CHECK(depth_smoothness_huber(d, Mask(2, 1), 0.1).value == 0.0);
  CHECK_THROWS_AS(depth_smoothness_huber(d, pair, 0.0), ContractError);
}

TEST_CASE("hallucination_l1 examples") {
  Mask m(4, 4, 1, 1);
  m(1, 1) = 0;
  ImageF target(4, 4);
  target(1, 1) = 1.0;
  CHECK(hallucination_l1(target, m).value == 0.0);
  CHECK(hallucination_l1(ImageF(4, 4), Mask(4, 4, 1, 1)).value == 0.0);
  CHECK(hallucination_l1(ImageF(4, 4), Mask(4, 4)).value == 1.0);
  CHECK(hallucination_l1(ImageF(4, 4), Mask(4, 4, 1, 1), false).value == 1.0);
}

TEST_CASE("rigid_loss examples") {
  const GaussianCloud prev = points({Vec3(0, 0, 0), Vec3(1, 0, 0)});
  const auto graph = build_graph(prev, 1, 1e-300);
  CHECK(rigid_loss(prev, prev, graph).value == 0.0);

  const GaussianCloud moved = rigidly_moved(prev, quat_identity(), Vec3(3, -2, 7));
  CHECK(rigid_loss(prev, moved, graph).value == 0.0);

  const GaussianCloud curr = points({Vec3(0, 0, 0), Vec3(0, 1, 0)});
  CHECK(rigid_loss(prev, curr, graph).value == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));

  std::mt19937_64 rng(4);
  const GaussianCloud big = random_points(rng, 200, 0.1);
  const auto g = build_graph(big, 10, 50.0);
  const GaussianCloud rotated =
      rigidly_moved(big, quat_from_axis_angle(Vec3(1, 1, 0), 0.9), Vec3(0.3, 0.1, -0.2));
  CHECK(rigid_loss(big, rotated, g).value < 1e-12);

  CHECK_THROWS_AS(rigid_loss(prev, points({Vec3::Zero()}), graph), ContractError);
}

TEST_CASE("rot_loss examples") {
  GaussianCloud prev = points({Vec3(0, 0, 0), Vec3(1, 0, 0)});
  const auto graph = build_graph(prev, 1, 1e-300);
  CHECK(rot_loss(prev, prev, graph).value == 0.0);

  const Quat dq = quat_from_axis_angle(Vec3(0, 1, 1), 0.4);
  CHECK(rot_loss(prev, rigidly_moved(prev, dq, Vec3::Zero()), graph).value < 1e-15);

  GaussianCloud curr = prev;
  curr.rotations[0] = Quat(0, 0, 0, 1); // 180 degrees about z
  CHECK(rot_loss(prev, curr, graph).value == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("iso_loss examples") {
  const GaussianCloud base = points({Vec3(0, 0, 0), Vec3(1, 0, 0)});
  const auto graph = build_graph(base, 1, 1e-300);
  CHECK(iso_loss(base, points({Vec3(0, 0, 0), Vec3(2, 0, 0)}), graph).value == 1.0);
  CHECK(iso_loss(base, points({Vec3(0, 0, 0), Vec3(1.1, 0, 0)}), graph).value ==
        doctest::Approx(0.1).epsilon(1e-14));
  CHECK(iso_loss(base, rigidly_moved(base, quat_from_axis_angle(Vec3(1, 2, 3), 1.0), Vec3(1, 1, 1)),
                 graph)
            .value < 1e-12);
}

TEST_CASE("physics losses are invariant to a common rigid motion of both frames") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> jitter(0.0, 0.01);
  const GaussianCloud prev = random_points(rng, 300, 0.1);
  GaussianCloud curr = prev;
  for (std::size_t i = 0; i < curr.size(); ++i) {
    curr.positions[i] += Vec3(jitter(rng), jitter(rng), jitter(rng));
    curr.rotations[i] = quat_multiply(quat_from_axis_angle(Vec3(1, 0, 0), jitter(rng)),
                                      curr.rotations[i]);
  }
  const auto graph = build_graph(prev, 8, 100.0);
  const Quat r = quat_from_axis_angle(Vec3(0.2, -1, 0.4), 2.1);
  const Vec3 t(0.5, -1.0, 2.0);
  const GaussianCloud prev_m = rigidly_moved(prev, r, t), curr_m = rigidly_moved(curr, r, t);
  const auto graph_m = build_graph(prev_m, 8, 100.0);
  CHECK(std::abs(rigid_loss(prev, curr, graph).value - rigid_loss(prev_m, curr_m, graph_m).value) <
        1e-10);
  CHECK(std::abs(iso_loss(prev, curr, graph).value - iso_loss(prev_m, curr_m, graph_m).value) <
        1e-10);
}

TEST_CASE("physics loss gradients match finite differences") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> jitter(0.0, 0.05);
    const GaussianCloud prev = random_points(rng, 5, 0.3);
    GaussianCloud curr = prev;
    for (std::size_t i = 0; i < curr.size(); ++i) {
      curr.positions[i] += Vec3(jitter(rng), jitter(rng), jitter(rng));
      curr.rotations[i] = 1.3 * testing::random_quat(rng); // unnormalized on purpose
    }
    const auto graph = build_graph(prev, 3, 2.0);
    CAPTURE(seed);
    for (int which = 0; which < 3; ++which) {
      auto loss = [&](const GaussianCloud &c) -> CloudLoss {
        return which == 0 ? rigid_loss(prev, c, graph)
                          : which == 1 ? rot_loss(prev, c, graph) : iso_loss(prev, c, graph);
      };
      const auto r = testing::check_gradients(curr, loss(curr).grad,
                                              [&](const GaussianCloud &c) { return loss(c).value; });
      CAPTURE(which);
      CAPTURE(r.worst_name);
      CHECK(r.failures == 0);
    }
  }
}

TEST_CASE("image-space loss gradients through the renderer match finite differences") {
  const Camera cam = testing::make_camera(16, 16, 20.0);
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    std::mt19937_64 rng(seed);
    const GaussianCloud cloud = testing::random_cloud(rng, cam, 5);
    const FrameObservation frame = random_frame(rng, 16, 16);
    CAPTURE(seed);

    // A tiny alpha cutoff keeps the footprint edge from introducing jumps under the FD step.
    RasterSettings settings;
    settings.alpha_min = 1e-10;
    for (int term = 0; term < 4; ++term) {
      auto evaluate = [&](const GaussianCloud &c, CloudGradients *grad) {
        const RenderOutput out = render(c, cam, settings);
        RenderGradients rg;
        double value = 0.0;
        ImageLoss il;
        DepthLoss dl;
        switch (term) {
        case 0:
          il = image_l1(out.color, frame.image, frame.tool_mask);
          rg.color = &il.grad;
          value = il.value;
          break;
        case 1:
          dl = depth_l1(out.depth, out.alpha, frame.depth, frame.tool_mask, frame.depth_source, 0.1);
          rg.depth = &dl.grad_depth;
          rg.alpha = &dl.grad_alpha;
          value = dl.value;
          break;
        case 2:
          il = depth_smoothness_huber(out.depth, frame.tool_mask, 0.05);
          rg.depth = &il.grad;
          value = il.value;
          break;
        default:
          il = hallucination_l1(out.hallucination, frame.tool_mask);
          rg.hallucination = &il.grad;
          value = il.value;
        }
        if (grad)
          *grad = render_backward(out, rg, c, cam);
        return value;
      };
      CloudGradients analytic;
      evaluate(cloud, &analytic);
      const auto r = testing::check_gradients(
          cloud, analytic, [&](const GaussianCloud &c) { return evaluate(c, nullptr); });
      CAPTURE(term);
      CAPTURE(r.worst_name);
      CHECK(r.failures == 0);
    }
  }
}

TEST_CASE("total losses") {
  const Camera cam = testing::make_camera(16, 16, 20.0);
  std::mt19937_64 rng(77);
  const GaussianCloud prev = testing::random_cloud(rng, cam, 30);
  GaussianCloud cloud = prev;
  std::normal_distribution<double> jitter(0.0, 0.02);
  for (auto &p : cloud.positions)
    p += Vec3(jitter(rng), jitter(rng), jitter(rng));
  const FrameObservation frame = random_frame(rng, 16, 16);
  const auto graph = build_graph(prev, 5, 10.0);
  const RenderOutput out = render(cloud, cam);
  LossWeights w;
  LossOptions opt;

  SUBCASE("first frame is a linear combination") {
    LossWeights only_image = w;
    only_image.depth = only_image.smoothness = only_image.hallucination = 0.0;
    const TotalLoss t = total_loss_first_frame(out, frame, cloud, cam, only_image, opt);
    CHECK(t.terms.total == doctest::Approx(t.terms.image).epsilon(1e-15));

    LossOptions bare = opt;
    bare.smoothness = bare.hallucination = false;
    LossWeights lw = w;
    lw.image = 1.0;
    lw.depth = 0.5;
    const TotalLoss t2 = total_loss_first_frame(out, frame, cloud, cam, lw, bare);
    CHECK(t2.terms.total == doctest::Approx(t2.terms.image + 0.5 * t2.terms.depth).epsilon(1e-15));
  }

  SUBCASE("subsequent with zero physics weights equals first frame") {
    LossWeights lw = w;
    lw.rigid = lw.rotation = lw.isometry = 0.0;
    const TotalLoss a = total_loss_subsequent(out, frame, cloud, prev, graph, cam, lw, opt);
    const TotalLoss b = total_loss_first_frame(out, frame, cloud, cam, lw, opt);
    CHECK(a.terms.total == b.terms.total);
    CHECK(a.grad.positions == b.grad.positions);
  }

  SUBCASE("gradient is the weighted sum of term gradients") {
    const TotalLoss total = total_loss_subsequent(out, frame, cloud, prev, graph, cam, w, opt);
    CloudGradients sum = CloudGradients::zeros_like(cloud);
    auto add_render_term = [&](RenderGradients rg, double weight, bool detach) {
      BackwardOptions bo;
      bo.detach_hallucination_geometry = detach;
      sum.add_scaled(render_backward(out, rg, cloud, cam, bo), weight);
    };
    const ImageLoss il = image_l1(out.color, frame.image, frame.tool_mask);
    add_render_term({&il.grad, nullptr, nullptr, nullptr}, w.image, false);
    const DepthLoss dl = depth_l1(out.depth, out.alpha, frame.depth, frame.tool_mask,
                                  frame.depth_source, w.filled_depth);
    add_render_term({nullptr, &dl.grad_depth, nullptr, &dl.grad_alpha}, w.depth, false);
    const ImageLoss sl = depth_smoothness_huber(out.depth, frame.tool_mask, opt.huber_delta);
    add_render_term({nullptr, &sl.grad, nullptr, nullptr}, w.smoothness, false);
    const ImageLoss hl = hallucination_l1(out.hallucination, frame.tool_mask);
    add_render_term({nullptr, nullptr, &hl.grad, nullptr}, w.hallucination, true);
    sum.add_scaled(rigid_loss(prev, cloud, graph).grad, w.rigid);
    sum.add_scaled(rot_loss(prev, cloud, graph).grad, w.rotation);
    sum.add_scaled(iso_loss(prev, cloud, graph).grad, w.isometry);

    double worst = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      worst = std::max(worst, (sum.positions[i] - total.grad.positions[i]).norm());
      worst = std::max(worst, (sum.rotations[i] - total.grad.rotations[i]).norm());
      worst = std::max(worst, (sum.log_scales[i] - total.grad.log_scales[i]).norm());
      worst = std::max(worst, std::abs(sum.opacity_logits[i] - total.grad.opacity_logits[i]));
      worst = std::max(worst, std::abs(sum.hallucination_logits[i] -
                                       total.grad.hallucination_logits[i]));
    }
    CHECK(worst < 1e-10);
    const double expected = w.image * il.value + w.depth * dl.value + w.smoothness * sl.value +
                            w.hallucination * hl.value + w.rigid * total.terms.rigid +
                            w.rotation * total.terms.rotation + w.isometry * total.terms.isometry;
    CHECK(total.terms.total == doctest::Approx(expected).epsilon(1e-14));

    // Doubling one weight doubles its contribution.
    LossWeights doubled = w;
    doubled.rigid *= 2.0;
    const TotalLoss t2 = total_loss_subsequent(out, frame, cloud, prev, graph, cam, doubled, opt);
    CHECK(t2.terms.total - total.terms.total ==
          doctest::Approx(w.rigid * total.terms.rigid).epsilon(1e-12));
  }

  SUBCASE("static scene with a perfect render is a fixed point") {
    FrameObservation perfect;
    perfect.image = out.color;
    perfect.depth = ImageF(16, 16);
    perfect.depth_source = Image<DepthSource>(16, 16);
    perfect.tool_mask = Mask(16, 16, 1, 1);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (out.alpha(x, y) > 0.0) {
          perfect.depth(x, y) = out.depth(x, y) / out.alpha(x, y);
          perfect.depth_source(x, y) = DepthSource::GroundTruth;
        }
    LossOptions o = opt;
    o.smoothness = false;
    o.hallucination = false;
    const auto g = build_graph(cloud, 5, 10.0);
    const TotalLoss t = total_loss_subsequent(out, perfect, cloud, cloud, g, cam, w, o);
    CHECK(t.terms.total < 1e-15);
  }
}
