#include "deformsplat/losses.hpp"

#include <cmath>
#include <string>

#include "deformsplat/parallel.hpp"

namespace deformsplat {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void require_graph_sizes(const GaussianCloud &a, const GaussianCloud &b,
                         const RegularizationGraph &graph, const char *what) {
  if (a.positions.size() != b.positions.size() || a.positions.size() != graph.point_count())
    throw ContractError(std::string(what) + ": clouds and graph disagree on N (" +
                        std::to_string(a.positions.size()) + ", " +
                        std::to_string(b.positions.size()) + ", " +
                        std::to_string(graph.point_count()) + ")");
}

// Matrix of q -> q * p (right multiplication by p).
Eigen::Matrix4d right_multiply_matrix(const Quat &p) {
  Eigen::Matrix4d m;
  m << p[0], -p[1], -p[2], -p[3], //
      p[1], p[0], p[3], -p[2],    //
      p[2], -p[3], p[0], p[1],    //
      p[3], p[2], -p[1], p[0];
  return m;
}

// Edge terms are summed per source point i so that the final reduction runs
// in a fixed order regardless of threads.
template <typename EdgeFn>
double sum_over_points(std::size_t n, EdgeFn &&per_point) {
  std::vector<double> partial(n, 0.0);
  parallel_for(n, [&](std::size_t i) { partial[i] = per_point(i); });
  double s = 0.0;
  for (double v : partial)
    s += v;
  return s;
}

} // namespace

void LossWeights::validate() const {
  for (double v : {image, depth, rigid, rotation, isometry, hallucination, smoothness})
    if (!(v >= 0.0))
      throw ConfigError("loss weights must be non-negative");
  if (!(filled_depth >= 0.0 && filled_depth <= 1.0))
    throw ConfigError("filled_depth weight must be in [0, 1]");
}

ImageLoss image_l1(const ImageF &rendered, const ImageF &observed, const Mask &mask) {
  require_same_shape(rendered, observed, "image_l1");
  require_same_shape(rendered, mask, "image_l1");
  if (rendered.channels() != observed.channels())
    throw ContractError("image_l1: channel counts differ");
  const int ch = rendered.channels();
  std::size_t count = 0;
  for (auto m : mask.data())
    count += m != 0;
  if (count == 0)
    throw EmptySupervisionError("image_l1: mask selects no pixel");
  const double norm = 1.0 / static_cast<double>(count * ch);

  ImageLoss out{0.0, ImageF(rendered.width(), rendered.height(), ch)};
  double sum = 0.0;
  for (int y = 0; y < rendered.height(); ++y)
    for (int x = 0; x < rendered.width(); ++x) {
      if (!mask(x, y))
        continue;
      for (int c = 0; c < ch; ++c) {
        const double d = rendered(x, y, c) - observed(x, y, c);
        sum += std::abs(d);
        out.grad(x, y, c) = sign(d) * norm;
      }
    }
  out.value = sum * norm;
  return out;
}

DepthLoss depth_l1(const ImageF &rendered_depth, const ImageF &rendered_alpha,
                   const ImageF &observed_depth, const Mask &mask,
                   const Image<DepthSource> &sources, double filled_weight, double min_alpha) {
  require_same_shape(rendered_depth, rendered_alpha, "depth_l1");
  require_same_shape(rendered_depth, observed_depth, "depth_l1");
  require_same_shape(rendered_depth, mask, "depth_l1");
  require_same_shape(rendered_depth, sources, "depth_l1");
  const int w = rendered_depth.width(), h = rendered_depth.height();

  auto weight_of = [&](int x, int y) {
    if (!mask(x, y) || rendered_alpha(x, y) < min_alpha)
      return 0.0;
    switch (sources(x, y)) {
    case DepthSource::GroundTruth:
      return 1.0;
    case DepthSource::Filled:
      return filled_weight;
    default:
      return 0.0;
    }
  };

  double total_weight = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      total_weight += weight_of(x, y);
  if (!(total_weight > 0.0))
    throw EmptySupervisionError("depth_l1: no pixel carries depth supervision");

  DepthLoss out{0.0, ImageF(w, h), ImageF(w, h)};
  double sum = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = weight_of(x, y);
      if (u == 0.0)
        continue;
      const double a = rendered_alpha(x, y);
      const double d = rendered_depth(x, y) / a - observed_depth(x, y);
      sum += u * std::abs(d);
      const double g = u * sign(d) / total_weight;
      out.grad_depth(x, y) = g / a;
      out.grad_alpha(x, y) = -g * rendered_depth(x, y) / (a * a);
    }
  out.value = sum / total_weight;
  return out;
}

ImageLoss depth_smoothness_huber(const ImageF &depth, const Mask &mask, double delta) {
  require_same_shape(depth, mask, "depth_smoothness_huber");
  if (!(delta > 0.0))
    throw ContractError("Huber delta must be positive");
  const int w = depth.width(), h = depth.height();
  ImageLoss out{0.0, ImageF(w, h)};

  auto huber = [delta](double d) {
    const double ad = std::abs(d);
    return ad <= delta ? 0.5 * d * d : delta * (ad - 0.5 * delta);
  };
  auto huber_grad = [delta](double d) { return std::abs(d) <= delta ? d : delta * sign(d); };

  std::size_t pairs = 0;
  double sum = 0.0;
  auto for_each_pair = [&](auto &&fn) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (!mask(x, y))
          continue;
        if (x + 1 < w && mask(x + 1, y))
          fn(x, y, x + 1, y);
        if (y + 1 < h && mask(x, y + 1))
          fn(x, y, x, y + 1);
      }
  };
  for_each_pair([&](int x0, int y0, int x1, int y1) {
    ++pairs;
    sum += huber(depth(x1, y1) - depth(x0, y0));
  });
  if (pairs == 0)
    return out;
  const double norm = 1.0 / static_cast<double>(pairs);
  for_each_pair([&](int x0, int y0, int x1, int y1) {
    const double g = norm * huber_grad(depth(x1, y1) - depth(x0, y0));
    out.grad(x1, y1) += g;
    out.grad(x0, y0) -= g;
  });
  out.value = sum * norm;
  return out;
}

CloudLoss rigid_loss(const GaussianCloud &prev, const GaussianCloud &curr,
                     const RegularizationGraph &graph) {
  require_graph_sizes(prev, curr, graph, "rigid_loss");
  const std::size_t n = curr.size();
  CloudLoss out{0.0, CloudGradients::zeros_like(curr)};
  if (graph.edge_count() == 0)
    return out;
  const double norm = 1.0 / static_cast<double>(graph.edge_count());

  std::vector<Mat3> rot_prev(n), rot_curr(n);
  parallel_for(n, [&](std::size_t i) {
    rot_prev[i] = rotation_matrix(prev.rotations[i]);
    rot_curr[i] = rotation_matrix(curr.rotations[i]);
  });

  // Per-edge gradients land on both endpoints, so collect them per source
  // point first and scatter sequentially.
  struct EdgeGrad {
    Vec3 g_mu; // dL/dmu_j; dL/dmu_i gets the negative
  };
  std::vector<std::vector<EdgeGrad>> edge_grads(n);
  std::vector<Mat3> grad_rot(n, Mat3::Zero());
  out.value = norm * sum_over_points(n, [&](std::size_t i) {
    const auto nb = graph.neighbors(i);
    const auto wt = graph.weights(i);
    const Mat3 relative = rot_prev[i] * rot_curr[i].transpose();
    auto &eg = edge_grads[i];
    eg.resize(nb.size());
    double s = 0.0;
    for (std::size_t e = 0; e < nb.size(); ++e) {
      const std::size_t j = nb[e];
      const Vec3 offset_curr = curr.positions[j] - curr.positions[i];
      const Vec3 r = (prev.positions[j] - prev.positions[i]) - relative * offset_curr;
      const double len = r.norm();
      s += wt[e] * len;
      if (len == 0.0) {
        eg[e].g_mu = Vec3::Zero();
        continue;
      }
      const Vec3 g = norm * wt[e] * r / len;
      eg[e].g_mu = -relative.transpose() * g;
      grad_rot[i] -= offset_curr * (rot_prev[i].transpose() * g).transpose();
    }
    return s;
  });

  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = graph.neighbors(i);
    for (std::size_t e = 0; e < nb.size(); ++e) {
      out.grad.positions[nb[e]] += edge_grads[i][e].g_mu;
      out.grad.positions[i] -= edge_grads[i][e].g_mu;
    }
  }
  parallel_for(n, [&](std::size_t i) {
    out.grad.rotations[i] = rotation_matrix_backward(curr.rotations[i], grad_rot[i]);
  });
  return out;
}

CloudLoss rot_loss(const GaussianCloud &prev, const GaussianCloud &curr,
                   const RegularizationGraph &graph) {
  require_graph_sizes(prev, curr, graph, "rot_loss");
  const std::size_t n = curr.size();
  CloudLoss out{0.0, CloudGradients::zeros_like(curr)};
  if (graph.edge_count() == 0)
    return out;
  const double norm = 1.0 / static_cast<double>(graph.edge_count());

  std::vector<Quat> relative(n);
  std::vector<Eigen::Matrix4d> right(n);
  parallel_for(n, [&](std::size_t i) {
    const Quat inv_prev = quat_conjugate(quat_normalized(prev.rotations[i]));
    relative[i] = quat_multiply(quat_normalized(curr.rotations[i]), inv_prev);
    right[i] = right_multiply_matrix(inv_prev);
  });

  std::vector<std::vector<Quat>> edge_grads(n);
  std::vector<Quat> grad_rel(n, Quat::Zero());
  out.value = norm * sum_over_points(n, [&](std::size_t i) {
    const auto nb = graph.neighbors(i);
    const auto wt = graph.weights(i);
    auto &eg = edge_grads[i];
    eg.resize(nb.size());
    double s = 0.0;
    for (std::size_t e = 0; e < nb.size(); ++e) {
      const Quat d = relative[nb[e]] - relative[i];
      const double len = d.norm();
      s += wt[e] * len;
      eg[e] = len == 0.0 ? Quat::Zero() : Quat(norm * wt[e] * d / len);
      grad_rel[i] -= eg[e];
    }
    return s;
  });
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = graph.neighbors(i);
    for (std::size_t e = 0; e < nb.size(); ++e)
      grad_rel[nb[e]] += edge_grads[i][e];
  }
  parallel_for(n, [&](std::size_t i) {
    out.grad.rotations[i] =
        normalize_backward(curr.rotations[i], right[i].transpose() * grad_rel[i]);
  });
  return out;
}

CloudLoss iso_loss(const GaussianCloud &frame0, const GaussianCloud &curr,
                   const RegularizationGraph &graph) {
  require_graph_sizes(frame0, curr, graph, "iso_loss");
  const std::size_t n = curr.size();
  CloudLoss out{0.0, CloudGradients::zeros_like(curr)};
  if (graph.edge_count() == 0)
    return out;
  const double norm = 1.0 / static_cast<double>(graph.edge_count());

  std::vector<std::vector<Vec3>> edge_grads(n);
  out.value = norm * sum_over_points(n, [&](std::size_t i) {
    const auto nb = graph.neighbors(i);
    const auto wt = graph.weights(i);
    const auto base = graph.base_distances(i);
    auto &eg = edge_grads[i];
    eg.resize(nb.size());
    double s = 0.0;
    for (std::size_t e = 0; e < nb.size(); ++e) {
      const Vec3 offset = curr.positions[nb[e]] - curr.positions[i];
      const double len = offset.norm();
      const double diff = len - base[e];
      s += wt[e] * std::abs(diff);
      eg[e] = len == 0.0 ? Vec3::Zero() : Vec3(norm * wt[e] * sign(diff) * offset / len);
    }
    return s;
  });
  for (std::size_t i = 0; i < n; ++i) {
    const auto nb = graph.neighbors(i);
    for (std::size_t e = 0; e < nb.size(); ++e) {
      out.grad.positions[nb[e]] += edge_grads[i][e];
      out.grad.positions[i] -= edge_grads[i][e];
    }
  }
  return out;
}

ImageLoss hallucination_l1(const ImageF &rendered, const Mask &tool_mask, bool target_is_tool) {
  require_same_shape(rendered, tool_mask, "hallucination_l1");
  const std::size_t count = rendered.pixel_count();
  ImageLoss out{0.0, ImageF(rendered.width(), rendered.height())};
  if (count == 0)
    return out;
  const double norm = 1.0 / static_cast<double>(count);
  double sum = 0.0;
  for (int y = 0; y < rendered.height(); ++y)
    for (int x = 0; x < rendered.width(); ++x) {
      const bool tool = tool_mask(x, y) == 0;
      const double target = (tool == target_is_tool) ? 1.0 : 0.0;
      const double d = rendered(x, y) - target;
      sum += std::abs(d);
      out.grad(x, y) = sign(d) * norm;
    }
  out.value = sum * norm;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

TotalLoss image_space_terms(const RenderOutput &render, const FrameObservation &frame,
                            const GaussianCloud &cloud, const Camera &camera,
                            const LossWeights &weights, const LossOptions &options) {
  frame.validate();
  if (!render.color.same_shape(frame.image))
    throw ContractError("render and frame dimensions differ");
  weights.validate();
  TotalLoss out;
  const int w = frame.width(), h = frame.height();

  ImageF grad_color(w, h, 3), grad_depth(w, h), grad_alpha(w, h), grad_halluc(w, h);
  auto accumulate = [](ImageF &dst, const ImageF &src, double weight) {
    for (std::size_t k = 0; k < dst.data().size(); ++k)
      dst.data()[k] += weight * src.data()[k];
  };

  const ImageLoss img = image_l1(render.color, frame.image, frame.tool_mask);
  out.terms.image = img.value;
  accumulate(grad_color, img.grad, weights.image);

  const DepthLoss dep = depth_l1(render.depth, render.alpha, frame.depth, frame.tool_mask,
                                 frame.depth_source, weights.filled_depth, options.coverage_gate);
  out.terms.depth = dep.value;
  accumulate(grad_depth, dep.grad_depth, weights.depth);
  accumulate(grad_alpha, dep.grad_alpha, weights.depth);

  if (options.smoothness) {
    const ImageLoss sm = depth_smoothness_huber(render.depth, frame.tool_mask, options.huber_delta);
    out.terms.smoothness = sm.value;
    accumulate(grad_depth, sm.grad, weights.smoothness);
  }
  if (options.hallucination) {
    const ImageLoss hl = hallucination_l1(render.hallucination, frame.tool_mask,
                                          options.hallucination_target_is_tool);
    out.terms.hallucination = hl.value;
    accumulate(grad_halluc, hl.grad, weights.hallucination);
  }

  RenderGradients rg{&grad_color, &grad_depth, &grad_halluc, &grad_alpha};
  BackwardOptions bo;
  bo.detach_hallucination_geometry = options.detach_hallucination_geometry;
  out.grad = render_backward(render, rg, cloud, camera, bo);
  out.terms.total = weights.image * out.terms.image + weights.depth * out.terms.depth +
                    (options.smoothness ? weights.smoothness * out.terms.smoothness : 0.0) +
                    (options.hallucination ? weights.hallucination * out.terms.hallucination : 0.0);
  return out;
}

} // namespace

TotalLoss total_loss_first_frame(const RenderOutput &render, const FrameObservation &frame,
                                 const GaussianCloud &cloud, const Camera &camera,
                                 const LossWeights &weights, const LossOptions &options) {
  return image_space_terms(render, frame, cloud, camera, weights, options);
}

TotalLoss total_loss_subsequent(const RenderOutput &render, const FrameObservation &frame,
                                const GaussianCloud &cloud, const GaussianCloud &prev,
                                const RegularizationGraph &graph, const Camera &camera,
                                const LossWeights &weights, const LossOptions &options) {
  TotalLoss out = image_space_terms(render, frame, cloud, camera, weights, options);
  const CloudLoss rigid = rigid_loss(prev, cloud, graph);
  const CloudLoss rot = rot_loss(prev, cloud, graph);
  const CloudLoss iso = iso_loss(cloud, cloud, graph);
  out.terms.rigid = rigid.value;
  out.terms.rotation = rot.value;
  out.terms.isometry = iso.value;
  out.grad.add_scaled(rigid.grad, weights.rigid);
  out.grad.add_scaled(rot.grad, weights.rotation);
  out.grad.add_scaled(iso.grad, weights.isometry);
  out.terms.total += weights.rigid * out.terms.rigid + weights.rotation * out.terms.rotation +
                     weights.isometry * out.terms.isometry;
  return out;
}

} // namespace deformsplat
