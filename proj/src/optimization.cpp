#include "deformsplat/optimization.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

namespace deformsplat {

namespace {

template <typename T> std::span<double> flat(std::vector<T> &v) {
  if constexpr (std::is_same_v<T, double>)
    return {v.data(), v.size()};
  else
    return {v.data()->data(), v.size() * static_cast<std::size_t>(T::RowsAtCompileTime)};
}

template <typename T> std::span<const double> flat(const std::vector<T> &v) {
  if constexpr (std::is_same_v<T, double>)
    return {v.data(), v.size()};
  else
    return {v.data()->data(), v.size() * static_cast<std::size_t>(T::RowsAtCompileTime)};
}

// Values per Gaussian for each group, in ParamGroup order.
std::array<std::size_t, kParamGroupCount> widths(int sh_degree) {
  return {3, 4, 3, 1, 3 * static_cast<std::size_t>(sh_coeff_count(sh_degree)), 1};
}

std::array<std::span<double>, kParamGroupCount> groups(GaussianCloud &c) {
  return {flat(c.positions),      flat(c.rotations), flat(c.log_scales),
          flat(c.opacity_logits), flat(c.sh_coeffs), flat(c.hallucination_logits)};
}

std::array<std::span<const double>, kParamGroupCount> groups(const CloudGradients &g) {
  return {flat(g.positions),      flat(g.rotations), flat(g.log_scales),
          flat(g.opacity_logits), flat(g.sh_coeffs), flat(g.hallucination_logits)};
}

} // namespace

std::string_view group_name(ParamGroup group) {
  switch (group) {
  case ParamGroup::Position: return "position";
  case ParamGroup::Rotation: return "rotation";
  case ParamGroup::Scale: return "scale";
  case ParamGroup::Opacity: return "opacity";
  case ParamGroup::Color: return "color";
  case ParamGroup::Hallucination: return "hallucination";
  }
  return "unknown";
}

void TrainSchedule::validate() const {
  if (first_frame_iters <= 0 || per_frame_iters <= 0)
    throw ConfigError("iteration counts must be positive");
  for (double r : {lr.position, lr.rotation, lr.scale, lr.opacity, lr.color, lr.hallucination})
    if (!(r > 0.0) || !std::isfinite(r))
      throw ConfigError("learning rates must be positive");
  if (prune_interval < 0)
    throw ConfigError("prune_interval must be >= 0");
  if (!(prune_opacity_threshold >= 0.0 && prune_opacity_threshold < 1.0))
    throw ConfigError("prune_opacity_threshold must be in [0, 1)");
  if (densify_enabled && densify_interval <= 0)
    throw ConfigError("densify_interval must be positive");
}

void FitConfig::validate() const {
  schedule.validate();
  weights.validate();
  if (graph_k < 1)
    throw ConfigError("graph_k must be >= 1");
  if (!(graph_lambda >= 0.0))
    throw ConfigError("graph_lambda must be >= 0");
  if (!(huber_delta_fraction > 0.0))
    throw ConfigError("huber_delta_fraction must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0))
    throw ConfigError("Adam betas must be in [0, 1)");
  if (!(adam.epsilon > 0.0))
    throw ConfigError("Adam epsilon must be positive");
  if (init.stride < 1)
    throw ConfigError("init stride must be >= 1");
  if (init.sh_degree < 0 || init.sh_degree > kMaxShDegree)
    throw ConfigError("sh_degree must be in [0, 3]");
}

std::array<double, kParamGroupCount> resolve_rates(const LearningRates &lr, double scene_extent) {
  return {lr.position * scene_extent, lr.rotation, lr.scale, lr.opacity, lr.color,
          lr.hallucination};
}

OptimizerState::OptimizerState(const GaussianCloud &cloud,
                               std::array<double, kParamGroupCount> rates, AdamParams params)
    : rates_(rates), params_(params) {
  const auto w = widths(cloud.sh_degree);
  for (std::size_t g = 0; g < kParamGroupCount; ++g) {
    moments_[g].m.assign(cloud.size() * w[g], 0.0);
    moments_[g].v.assign(cloud.size() * w[g], 0.0);
  }
}

bool OptimizerState::matches(const GaussianCloud &cloud) const {
  const auto w = widths(cloud.sh_degree);
  for (std::size_t g = 0; g < kParamGroupCount; ++g)
    if (moments_[g].m.size() != cloud.size() * w[g])
      return false;
  return true;
}

void OptimizerState::filter(const std::vector<bool> &keep, int sh_degree) {
  const auto w = widths(sh_degree);
  for (std::size_t g = 0; g < kParamGroupCount; ++g) {
    for (auto *arr : {&moments_[g].m, &moments_[g].v}) {
      std::size_t out = 0;
      for (std::size_t i = 0; i < keep.size(); ++i)
        if (keep[i])
          for (std::size_t k = 0; k < w[g]; ++k)
            (*arr)[out++] = (*arr)[i * w[g] + k];
      arr->resize(out);
    }
  }
}

void OptimizerState::grow(std::size_t count, int sh_degree) {
  const auto w = widths(sh_degree);
  for (std::size_t g = 0; g < kParamGroupCount; ++g) {
    moments_[g].m.resize(moments_[g].m.size() + count * w[g], 0.0);
    moments_[g].v.resize(moments_[g].v.size() + count * w[g], 0.0);
  }
}

void step(GaussianCloud &cloud, const CloudGradients &grad, OptimizerState &state) {
  if (!grad.same_layout(cloud) || !state.matches(cloud))
    throw ContractError("step: gradient or optimizer state does not match the cloud");
  auto params = groups(cloud);
  const auto grads = groups(grad);
  for (std::size_t g = 0; g < kParamGroupCount; ++g) {
    if (state.frozen_[g])
      continue;
    for (double v : grads[g])
      if (!std::isfinite(v))
        throw DivergedOptimizationError("non-finite gradient in parameter group '" +
                                        std::string(group_name(static_cast<ParamGroup>(g))) + "'");
  }

  ++state.step_;
  const AdamParams &p = state.params_;
  const double t = static_cast<double>(state.step_);
  const double c1 = 1.0 - std::pow(p.beta1, t);
  const double c2 = 1.0 - std::pow(p.beta2, t);
  for (std::size_t g = 0; g < kParamGroupCount; ++g) {
    if (state.frozen_[g])
      continue;
    const double lr = state.rates_[g];
    auto &m = state.moments_[g].m;
    auto &v = state.moments_[g].v;
    const auto x = params[g];
    const auto dx = grads[g];
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * dx[i];
      v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * dx[i] * dx[i];
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      x[i] -= lr * mh / (std::sqrt(vh) + p.epsilon);
    }
  }
  if (state.frozen_[static_cast<std::size_t>(ParamGroup::Rotation)])
    return;
  // Quaternions the update left untouched keep their exact bits.
  const auto &mq = state.moments_[static_cast<std::size_t>(ParamGroup::Rotation)].m;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (mq[4 * i] != 0.0 || mq[4 * i + 1] != 0.0 || mq[4 * i + 2] != 0.0 || mq[4 * i + 3] != 0.0)
      cloud.rotations[i] = quat_normalized(cloud.rotations[i]);
}

double depth_range(const FrameObservation &frame) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (int y = 0; y < frame.depth.height(); ++y)
    for (int x = 0; x < frame.depth.width(); ++x)
      if (frame.depth_valid(x, y)) {
        lo = std::min(lo, frame.depth(x, y));
        hi = std::max(hi, frame.depth(x, y));
      }
  return hi >= lo ? hi - lo : 0.0;
}

namespace {

LossOptions loss_options(const FitConfig &config, double range) {
  LossOptions o = config.loss;
  // A flat scene still needs a positive delta.
  o.huber_delta = config.huber_delta_fraction * (range > 0.0 ? range : 1.0);
  return o;
}

void check_loss(const LossBreakdown &terms, int frame, int iteration) {
  if (!std::isfinite(terms.total))
    throw DivergedOptimizationError("loss became non-finite at frame " + std::to_string(frame) +
                                    ", iteration " + std::to_string(iteration));
}

} // namespace

std::vector<bool> prune_transparent(GaussianCloud &cloud, OptimizerState &state, double threshold) {
  std::vector<bool> keep(cloud.size());
  std::size_t kept = 0;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    kept += keep[i] = cloud.opacity(i) >= threshold;
  // Never prune to an empty cloud.
  if (kept == 0 || kept == cloud.size())
    return {};
  cloud.filter(keep);
  state.filter(keep, cloud.sh_degree);
  return keep;
}

void densify_by_gradient(GaussianCloud &cloud, OptimizerState &state, std::vector<double> &grad_accum,
             int window, double threshold) {
  const std::size_t n = cloud.size();
  std::size_t added = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (grad_accum[i] / window <= threshold)
      continue;
    cloud.duplicate(i);
    // Offset the clone along the smallest axis so the pair can separate.
    const Mat3 r = rotation_matrix(cloud.rotations[i]);
    Eigen::Index axis;
    cloud.log_scales[i].minCoeff(&axis);
    cloud.positions.back() += 0.5 * cloud.scale(i)[axis] * r.col(axis);
    ++added;
  }
  state.grow(added, cloud.sh_degree);
  grad_accum.assign(cloud.size(), 0.0);
}

GaussianCloud refine_first_frame(GaussianCloud cloud, const FrameObservation &frame0,
                                 const Camera &camera, const FitConfig &config,
                                 double scene_extent, double range,
                                 const IterationCallback &callback, OptimizerState *optimizer) {
  config.validate();
  cloud.validate();
  const LossOptions options = loss_options(config, range);
  const TrainSchedule &s = config.schedule;
  OptimizerState state(cloud, resolve_rates(s.lr, scene_extent), config.adam);
  std::vector<double> grad_accum(cloud.size(), 0.0);
  int accum_window = 0;
  for (int it = 0; it < s.first_frame_iters; ++it) {
    const RenderOutput out = render(cloud, camera, config.raster);
    const TotalLoss loss =
        total_loss_first_frame(out, frame0, cloud, camera, config.weights, options);
    check_loss(loss.terms, 0, it);
    if (callback)
      callback({0, it, loss.terms});
    step(cloud, loss.grad, state);

    const bool last = it + 1 == s.first_frame_iters;
    if (s.densify_enabled && !last) {
      for (std::size_t i = 0; i < cloud.size(); ++i)
        grad_accum[i] += loss.grad.positions[i].norm();
      if (++accum_window == s.densify_interval) {
        densify_by_gradient(cloud, state, grad_accum, accum_window, s.densify_grad_threshold);
        accum_window = 0;
      }
    }
    if (s.prune_interval > 0 && (it + 1) % s.prune_interval == 0 && !last) {
      const std::vector<bool> keep = prune_transparent(cloud, state, s.prune_opacity_threshold);
      if (!keep.empty() && s.densify_enabled) {
        std::vector<double> kept;
        for (std::size_t i = 0; i < keep.size(); ++i)
          if (keep[i])
            kept.push_back(grad_accum[i]);
        grad_accum = std::move(kept);
      }
    }
  }
  if (optimizer)
    *optimizer = std::move(state);
  return cloud;
}

FirstFrameResult fit_first_frame(const FrameObservation &frame0, const Camera &camera,
                                 const FitConfig &config, const IterationCallback &callback) {
  config.validate();
  frame0.validate();
  camera.validate();
  DensePointCloud points;
  if (config.init.inpaint_hole_colors && config.backproject.include_filled_in_mask_hole) {
    FrameObservation filled = frame0;
    filled.image = inpaint_masked(frame0.image, frame0.tool_mask);
    points = backproject(filled, camera, config.backproject);
  } else {
    points = backproject(frame0, camera, config.backproject);
  }
  GaussianCloud cloud = init_cloud(points, config.init);
  cloud.time = frame0.time;
  const double extent =
      config.init.scene_extent > 0.0 ? config.init.scene_extent : scene_extent(points.points);
  const double range = depth_range(frame0);
  OptimizerState state;
  cloud = refine_first_frame(std::move(cloud), frame0, camera, config, extent, range, callback,
                             &state);
  RegularizationGraph graph = build_graph(cloud, config.graph_k, config.graph_lambda);
  return {std::move(cloud), {std::move(graph), extent, range}, std::move(state)};
}

GaussianCloud fit_next_frame(const GaussianCloud &prev, const FrameObservation &frame,
                             const TrackingReference &reference, const Camera &camera,
                             const FitConfig &config, int frame_index,
                             const IterationCallback &callback, OptimizerState *optimizer) {
  config.validate();
  frame.validate();
  if (prev.size() != reference.graph.point_count())
    throw ContractError("fit_next_frame: cloud has " + std::to_string(prev.size()) +
                        " Gaussians but the graph has " +
                        std::to_string(reference.graph.point_count()));
  const LossOptions options = loss_options(config, reference.depth_range);
  const TrainSchedule &s = config.schedule;
  GaussianCloud cloud = prev;
  cloud.time = frame.time;
  OptimizerState local;
  if (!optimizer || !optimizer->matches(cloud)) {
    local = OptimizerState(cloud, resolve_rates(s.lr, reference.scene_extent), config.adam);
    if (optimizer)
      *optimizer = std::move(local);
  }
  OptimizerState &state = optimizer ? *optimizer : local;
  for (auto g : {ParamGroup::Scale, ParamGroup::Opacity, ParamGroup::Color,
                 ParamGroup::Hallucination})
    state.set_frozen(g, !s.per_frame_appearance);
  for (int it = 0; it < s.per_frame_iters; ++it) {
    const RenderOutput out = render(cloud, camera, config.raster);
    const TotalLoss loss = total_loss_subsequent(out, frame, cloud, prev, reference.graph, camera,
                                                 config.weights, options);
    check_loss(loss.terms, frame_index, it);
    if (callback)
      callback({frame_index, it, loss.terms});
    step(cloud, loss.grad, state);
  }
  return cloud;
}

} // namespace deformsplat
