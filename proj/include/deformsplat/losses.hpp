#pragma once

#include "deformsplat/core_model.hpp"
#include "deformsplat/projection_raster.hpp"
#include "deformsplat/regularization_graph.hpp"

namespace deformsplat {

/// Term weights of the per-frame objectives. Defaults were chosen for
/// desk-scale synthetic scenes.
struct LossWeights {
  double image = 1.0;
  double depth = 0.5;
  double rigid = 4.0;
  double rotation = 4.0;
  double isometry = 2.0;
  double hallucination = 0.1;
  double smoothness = 0.01;
  /// Relative weight of disparity-filled depth in the depth term, in [0, 1].
  double filled_depth = 0.1;

  void validate() const;
};

/// A loss value and its gradient with respect to one image.
struct ImageLoss {
  double value = 0.0;
  ImageF grad;
};

struct DepthLoss {
  double value = 0.0;
  ImageF grad_depth;
  ImageF grad_alpha;
};

/// A loss value and its gradient with respect to the current cloud.
struct CloudLoss {
  double value = 0.0;
  CloudGradients grad;
};

/// Mean |rendered - observed| over all channels of pixels with mask = 1.
ImageLoss image_l1(const ImageF &rendered, const ImageF &observed, const Mask &mask);

/// Weighted mean of |D/A - D_obs|: weight 1 for ground-truth depth,
/// `filled_weight` for filled depth, 0 for invalid, masked-out or
/// low-coverage (A < min_alpha) pixels.
DepthLoss depth_l1(const ImageF &rendered_depth, const ImageF &rendered_alpha,
                   const ImageF &observed_depth, const Mask &mask,
                   const Image<DepthSource> &sources, double filled_weight,
                   double min_alpha = 0.5);

/// Mean Huber penalty of horizontal and vertical neighbor differences where
/// both pixels are in the mask. Zero pairs give 0.
ImageLoss depth_smoothness_huber(const ImageF &rendered_depth, const Mask &mask, double delta);

/// Mean over edges of w_ij |(mu_j,t-1 - mu_i,t-1) - R_i,t-1 R_i,t^-1 (mu_j,t - mu_i,t)|.
/// `prev` is a constant; the gradient is with respect to `curr`.
CloudLoss rigid_loss(const GaussianCloud &prev, const GaussianCloud &curr,
                     const RegularizationGraph &graph);

/// 1/(k N) sum w_ij |q_j,t q_j,t-1^-1 - q_i,t q_i,t-1^-1| on normalized quaternions.
CloudLoss rot_loss(const GaussianCloud &prev, const GaussianCloud &curr,
                   const RegularizationGraph &graph);

/// 1/(k N) sum w_ij | |mu_j,0 - mu_i,0| - |mu_j,t - mu_i,t| |, frame-0
/// distances taken from the graph.
CloudLoss iso_loss(const GaussianCloud &frame0, const GaussianCloud &curr,
                   const RegularizationGraph &graph);

/// Mean over all pixels of |H - target|, target = 1 - M (tool pixels are the
/// ones that must be hallucinated). `target_is_tool = false` flips it to M.
ImageLoss hallucination_l1(const ImageF &rendered_halluc, const Mask &tool_mask,
                           bool target_is_tool = true);

struct LossOptions {
  double huber_delta = 0.01;
  bool smoothness = true;
  bool hallucination = true;
  double coverage_gate = 0.5;
  bool hallucination_target_is_tool = true;
  /// Mask supervision moves only hallucination logits.
  bool detach_hallucination_geometry = true;
};

/// Unweighted term values plus the weighted total.
struct LossBreakdown {
  double total = 0.0;
  double image = 0.0;
  double depth = 0.0;
  double rigid = 0.0;
  double rotation = 0.0;
  double isometry = 0.0;
  double hallucination = 0.0;
  double smoothness = 0.0;
};

struct TotalLoss {
  LossBreakdown terms;
  CloudGradients grad;
};

/// image + depth (+ smoothness, + hallucination) for the first frame.
TotalLoss total_loss_first_frame(const RenderOutput &render, const FrameObservation &frame,
                                 const GaussianCloud &cloud, const Camera &camera,
                                 const LossWeights &weights, const LossOptions &options = {});

/// First-frame terms plus the rigid, rotation and isometry regularizers
/// against the previous frame and the frame-0 graph.
TotalLoss total_loss_subsequent(const RenderOutput &render, const FrameObservation &frame,
                                const GaussianCloud &cloud, const GaussianCloud &prev,
                                const RegularizationGraph &graph, const Camera &camera,
                                const LossWeights &weights, const LossOptions &options = {});

} // namespace deformsplat
