#include "deformsplat/metrics.hpp"

#include <chrono>
#include <cmath>
#include <string>

namespace deformsplat {

namespace {

std::size_t count_mask(const Mask &mask) {
  std::size_t n = 0;
  for (auto m : mask.data())
    n += m != 0;
  return n;
}

void require_pair(const ImageF &a, const ImageF &b, const Mask &mask, const char *what) {
  require_same_shape(a, b, what);
  require_same_shape(a, mask, what);
  if (a.channels() != b.channels())
    throw ContractError(std::string(what) + ": channel counts differ");
}

} // namespace

double psnr(const ImageF &a, const ImageF &b, const Mask &mask) {
  require_pair(a, b, mask, "psnr");
  const std::size_t n = count_mask(mask);
  if (n == 0)
    throw EmptySupervisionError("psnr: mask selects no pixel");
  double sum = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x)
      if (mask(x, y))
        for (int c = 0; c < a.channels(); ++c) {
          const double d = a(x, y, c) - b(x, y, c);
          sum += d * d;
        }
  const double mse = sum / static_cast<double>(n * a.channels());
  if (mse == 0.0)
    return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const ImageF &a, const ImageF &b, const Mask &mask, const SsimOptions &o) {
  require_pair(a, b, mask, "ssim");
  if (o.window < 1 || o.window % 2 == 0)
    throw ContractError("ssim: window must be a positive odd size");
  if (a.width() < o.window || a.height() < o.window)
    throw ContractError("ssim: image is smaller than the " + std::to_string(o.window) + "x" +
                        std::to_string(o.window) + " window");
  const int r = o.window / 2;
  std::vector<double> kernel(o.window);
  double ksum = 0.0;
  for (int i = 0; i < o.window; ++i)
    ksum += kernel[i] = std::exp(-0.5 * (i - r) * (i - r) / (o.sigma * o.sigma));
  for (double &k : kernel)
    k /= ksum;
  const double c1 = (o.k1) * (o.k1), c2 = (o.k2) * (o.k2);

  // Summed-area counts of unmasked pixels to find fully masked windows.
  const int w = a.width(), h = a.height();
  std::vector<int> holes((w + 1) * (h + 1), 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      holes[(y + 1) * (w + 1) + x + 1] = (mask(x, y) == 0) + holes[y * (w + 1) + x + 1] +
                                         holes[(y + 1) * (w + 1) + x] - holes[y * (w + 1) + x];

  double total = 0.0;
  std::size_t windows = 0;
  for (int y = r; y < h - r; ++y)
    for (int x = r; x < w - r; ++x) {
      const int x0 = x - r, y0 = y - r, x1 = x + r + 1, y1 = y + r + 1;
      const int inside = holes[y1 * (w + 1) + x1] - holes[y0 * (w + 1) + x1] -
                         holes[y1 * (w + 1) + x0] + holes[y0 * (w + 1) + x0];
      if (inside != 0)
        continue;
      double per_channel = 0.0;
      for (int c = 0; c < a.channels(); ++c) {
        double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const double k = kernel[dy + r] * kernel[dx + r];
            const double va = a(x + dx, y + dy, c), vb = b(x + dx, y + dy, c);
            ma += k * va;
            mb += k * vb;
            aa += k * va * va;
            bb += k * vb * vb;
            ab += k * va * vb;
          }
        const double va = aa - ma * ma, vb = bb - mb * mb, cov = ab - ma * mb;
        per_channel += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (va + vb + c2));
      }
      total += per_channel / a.channels();
      ++windows;
    }
  if (windows == 0)
    throw EmptySupervisionError("ssim: no window lies fully inside the mask");
  return total / static_cast<double>(windows);
}

DepthError depth_error(const ImageF &depth, const ImageF &alpha, const ImageF &reference,
                       const Mask &mask, double min_alpha) {
  require_same_shape(depth, alpha, "depth_error");
  require_same_shape(depth, reference, "depth_error");
  require_same_shape(depth, mask, "depth_error");
  DepthError e;
  double abs_sum = 0.0, sq_sum = 0.0;
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x) {
      if (!mask(x, y) || alpha(x, y) < min_alpha || alpha(x, y) <= 0.0)
        continue;
      const double d = depth(x, y) / alpha(x, y) - reference(x, y);
      abs_sum += std::abs(d);
      sq_sum += d * d;
      ++e.count;
    }
  if (e.count == 0)
    throw EmptySupervisionError("depth_error: no masked pixel with sufficient coverage");
  e.mae = abs_sum / static_cast<double>(e.count);
  e.rmse = std::sqrt(sq_sum / static_cast<double>(e.count));
  return e;
}

double hallucination_iou(const ImageF &halluc, const Mask &truth, double threshold) {
  require_same_shape(halluc, truth, "hallucination_iou");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw ContractError("hallucination_iou: threshold must be in (0, 1)");
  std::size_t inter = 0, uni = 0;
  for (int y = 0; y < halluc.height(); ++y)
    for (int x = 0; x < halluc.width(); ++x) {
      const bool p = halluc(x, y) >= threshold, t = truth(x, y) != 0;
      inter += p && t;
      uni += p || t;
    }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

void EvalReport::summarize() {
  if (frames.empty())
    return;
  const double n = static_cast<double>(frames.size());
  mean_psnr = 0.0;
  for (const auto &f : frames)
    mean_psnr += f.psnr / n;
  auto mean_of = [&](auto member) -> std::optional<double> {
    double s = 0.0;
    for (const auto &f : frames) {
      if (!(f.*member))
        return std::nullopt;
      s += *(f.*member);
    }
    return s / n;
  };
  mean_ssim = mean_of(&FrameMetrics::ssim);
  mean_depth_mae = mean_of(&FrameMetrics::depth_mae);
  mean_depth_rmse = mean_of(&FrameMetrics::depth_rmse);
  mean_hallucination_iou = mean_of(&FrameMetrics::hallucination_iou);
}

double measure_fps(const GaussianCloud &cloud, const Camera &camera,
                   const RasterSettings &settings, int renders) {
  if (renders <= 0)
    throw ContractError("measure_fps: renders must be positive");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  double sink = 0.0;
  for (int i = 0; i < renders; ++i)
    sink += render(cloud, camera, settings).alpha.data()[0];
  const double seconds = std::chrono::duration<double>(clock::now() - start).count();
  (void)sink;
  return seconds > 0.0 ? renders / seconds : std::numeric_limits<double>::max();
}

} // namespace deformsplat
