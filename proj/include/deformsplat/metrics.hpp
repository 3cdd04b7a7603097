#pragma once

#include <optional>
#include <vector>

#include "deformsplat/core_model.hpp"
#include "deformsplat/projection_raster.hpp"

namespace deformsplat {

inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over masked pixels and all channels, capped at 100 dB.
double psnr(const ImageF &a, const ImageF &b, const Mask &mask);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over windows that lie fully inside the image and the mask,
/// averaged over channels. Throws ContractError if the image is smaller
/// than the window.
double ssim(const ImageF &a, const ImageF &b, const Mask &mask, const SsimOptions &options = {});

struct DepthError {
  double mae = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

/// Error of D/A against the reference over masked pixels with A >= min_alpha.
DepthError depth_error(const ImageF &depth, const ImageF &alpha, const ImageF &reference,
                       const Mask &mask, double min_alpha = 0.5);

/// IoU of {H >= threshold} against `truth`. Both empty gives 1.
double hallucination_iou(const ImageF &halluc, const Mask &truth, double threshold = 0.5);

struct FrameMetrics {
  double psnr = 0.0;
  /// Empty when no SSIM window fits inside the mask.
  std::optional<double> ssim;
  double mask_coverage = 0.0;
  std::optional<double> depth_mae;
  std::optional<double> depth_rmse;
  std::optional<double> hallucination_iou;
};

struct EvalReport {
  std::vector<FrameMetrics> frames;
  double mean_psnr = 0.0;
  std::optional<double> mean_ssim;
  std::optional<double> mean_depth_mae;
  std::optional<double> mean_depth_rmse;
  std::optional<double> mean_hallucination_iou;
  double fps = 0.0;

  /// Fills the means from the per-frame values.
  void summarize();
};

/// Renders per second, mean over `renders` forward passes.
double measure_fps(const GaussianCloud &cloud, const Camera &camera,
                   const RasterSettings &settings = {}, int renders = 100);

} // namespace deformsplat
