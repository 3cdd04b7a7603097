#pragma once

#include <array>
#include <functional>
#include <string_view>
#include <vector>

#include "deformsplat/initialization.hpp"
#include "deformsplat/losses.hpp"
#include "deformsplat/projection_raster.hpp"
#include "deformsplat/regularization_graph.hpp"

namespace deformsplat {

enum class ParamGroup { Position, Rotation, Scale, Opacity, Color, Hallucination };
inline constexpr std::size_t kParamGroupCount = 6;

std::string_view group_name(ParamGroup group);

struct LearningRates {
  /// Multiplied by the scene extent.
  double position = 1.6e-4;
  double rotation = 1e-3;
  double scale = 5e-3;
  double opacity = 5e-2;
  double color = 2.5e-3;
  double hallucination = 5e-2;
};

struct TrainSchedule {
  int first_frame_iters = 2000;
  int per_frame_iters = 300;
  LearningRates lr;
  /// 0 disables pruning.
  int prune_interval = 0;
  double prune_opacity_threshold = 0.005;
  bool densify_enabled = false;
  int densify_interval = 100;
  /// Mean position-gradient norm above which a Gaussian is cloned.
  double densify_grad_threshold = 2e-4;
  /// Let scales, opacity, color and hallucination move after frame 0.
  bool per_frame_appearance = false;

  void validate() const;
};

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-15;
};

/// Adam moments for every parameter array of one cloud.
class OptimizerState {
public:
  OptimizerState() = default;
  OptimizerState(const GaussianCloud &cloud, std::array<double, kParamGroupCount> rates,
                 AdamParams params = {});

  long step_count() const { return step_; }
  double rate(ParamGroup g) const { return rates_[static_cast<std::size_t>(g)]; }
  bool frozen(ParamGroup g) const { return frozen_[static_cast<std::size_t>(g)]; }
  void set_frozen(ParamGroup g, bool value) { frozen_[static_cast<std::size_t>(g)] = value; }
  const AdamParams &params() const { return params_; }

  /// Drops moments of removed Gaussians; keeps the rest in order.
  void filter(const std::vector<bool> &keep, int sh_degree);
  /// Appends zero moments for a new Gaussian.
  void grow(std::size_t count, int sh_degree);

  bool matches(const GaussianCloud &cloud) const;

private:
  friend void step(GaussianCloud &, const CloudGradients &, OptimizerState &);

  struct Moments {
    std::vector<double> m, v;
  };
  std::array<Moments, kParamGroupCount> moments_;
  std::array<double, kParamGroupCount> rates_{};
  std::array<bool, kParamGroupCount> frozen_{};
  AdamParams params_;
  long step_ = 0;
};

/// Resolved per-group learning rates (the position rate scaled by extent).
std::array<double, kParamGroupCount> resolve_rates(const LearningRates &lr, double scene_extent);

/// One bias-corrected Adam update of every non-frozen group, followed by
/// quaternion renormalization. Throws DivergedOptimizationError naming the
/// group if a gradient is not finite.
void step(GaussianCloud &cloud, const CloudGradients &grad, OptimizerState &state);

/// Removes Gaussians with opacity below threshold (unless that would empty
/// the cloud) together with their moments. Returns the keep flags, or an
/// empty vector when nothing was removed.
std::vector<bool> prune_transparent(GaussianCloud &cloud, OptimizerState &state, double threshold);

/// Clones Gaussians whose accumulated position-gradient norm, averaged over
/// `window` steps, exceeds threshold. Resets the accumulator.
void densify_by_gradient(GaussianCloud &cloud, OptimizerState &state,
                         std::vector<double> &grad_accum, int window, double threshold);

struct FitConfig {
  TrainSchedule schedule;
  LossWeights weights;
  LossOptions loss;
  InitConfig init;
  BackprojectOptions backproject{.include_filled_in_mask_hole = true};
  RasterSettings raster;
  AdamParams adam;
  int graph_k = 20;
  double graph_lambda = 2000.0;
  /// Huber delta as a fraction of the frame-0 depth range.
  double huber_delta_fraction = 0.01;

  void validate() const;
};

struct IterationRecord {
  int frame = 0;
  int iteration = 0;
  LossBreakdown terms;
};
using IterationCallback = std::function<void(const IterationRecord &)>;

/// Quantities fixed at frame 0 and reused when tracking later frames.
struct TrackingReference {
  RegularizationGraph graph;
  double scene_extent = 0.0;
  double depth_range = 0.0;
};

struct FirstFrameResult {
  GaussianCloud cloud;
  TrackingReference reference;
  /// Moments at the end of the first-frame phase, for warm-starting frame 1.
  OptimizerState optimizer;
};

/// Max minus min of the frame's valid depth values.
double depth_range(const FrameObservation &frame);

/// Backprojects, initializes and optimizes the first-frame objective, then
/// builds the regularization graph on the result.
FirstFrameResult fit_first_frame(const FrameObservation &frame0, const Camera &camera,
                                 const FitConfig &config, const IterationCallback &callback = {});

/// Optimizes the first-frame objective starting from a given cloud.
GaussianCloud refine_first_frame(GaussianCloud cloud, const FrameObservation &frame0,
                                 const Camera &camera, const FitConfig &config,
                                 double scene_extent, double depth_range,
                                 const IterationCallback &callback = {},
                                 OptimizerState *optimizer = nullptr);

/// Starts from prev (constant-position forecast) and optimizes the
/// subsequent-frame objective. Only positions and rotations move unless
/// per_frame_appearance is set. A given optimizer carries its moments over
/// from the previous frame and is updated in place; otherwise the moments
/// start at zero.
GaussianCloud fit_next_frame(const GaussianCloud &prev, const FrameObservation &frame,
                             const TrackingReference &reference, const Camera &camera,
                             const FitConfig &config, int frame_index = 1,
                             const IterationCallback &callback = {},
                             OptimizerState *optimizer = nullptr);

} // namespace deformsplat
