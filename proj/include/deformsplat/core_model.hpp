#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "deformsplat/image.hpp"

namespace deformsplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
/// Quaternion stored scalar-first: (w, x, y, z).
using Quat = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

// ---------------------------------------------------------------------------
// Quaternions

Quat quat_identity();
Quat quat_normalized(const Quat &q);
/// Hamilton product a * b.
Quat quat_multiply(const Quat &a, const Quat &b);
Quat quat_conjugate(const Quat &q);
Quat quat_from_axis_angle(const Vec3 &axis, double angle);
/// Rotation matrix of q / |q|.
Mat3 rotation_matrix(const Quat &q);
/// Pulls dL/dR back to the raw (unnormalized) quaternion.
Quat rotation_matrix_backward(const Quat &q, const Mat3 &grad_rotation);
/// Jacobian-transpose product of q -> q / |q|.
Quat normalize_backward(const Quat &q, const Quat &grad_normalized);

// ---------------------------------------------------------------------------
// Spherical harmonics (real basis, degree <= 3)

constexpr int kMaxShDegree = 3;
constexpr double kShC0 = 0.28209479177387814;

/// Coefficient triples per Gaussian for a given degree: (degree + 1)^2.
constexpr int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

/// RGB = sum_k c_k Y_k(dir) + 0.5. Degree 0 ignores dir.
Vec3 sh_to_color(int degree, std::span<const Vec3> coeffs, const Vec3 &dir);
/// Accumulates dL/dcoeffs into grad_coeffs and returns dL/ddir.
Vec3 sh_to_color_backward(int degree, std::span<const Vec3> coeffs, const Vec3 &dir,
                          const Vec3 &grad_color, std::span<Vec3> grad_coeffs);
/// Degree-0 coefficient that reproduces rgb.
Vec3 rgb_to_sh0(const Vec3 &rgb);

// ---------------------------------------------------------------------------

/// The optimizable per-frame state. Scales, opacity and hallucination are
/// stored in unconstrained form (log, logit, logit).
struct GaussianCloud {
  std::vector<Vec3> positions;
  std::vector<Quat> rotations;
  std::vector<Vec3> log_scales;
  std::vector<double> opacity_logits;
  int sh_degree = 0;
  /// Gaussian-major, sh_coeff_count(sh_degree) triples per Gaussian.
  std::vector<Vec3> sh_coeffs;
  std::vector<double> hallucination_logits;
  double time = 0.0;

  std::size_t size() const { return positions.size(); }
  int coeffs_per_gaussian() const { return sh_coeff_count(sh_degree); }

  std::span<const Vec3> sh(std::size_t i) const {
    const auto n = static_cast<std::size_t>(coeffs_per_gaussian());
    return {sh_coeffs.data() + i * n, n};
  }
  std::span<Vec3> sh(std::size_t i) {
    const auto n = static_cast<std::size_t>(coeffs_per_gaussian());
    return {sh_coeffs.data() + i * n, n};
  }

  Vec3 scale(std::size_t i) const { return log_scales[i].array().exp(); }
  double opacity(std::size_t i) const { return sigmoid(opacity_logits[i]); }
  double hallucination(std::size_t i) const { return sigmoid(hallucination_logits[i]); }

  /// Allocates n Gaussians at the origin with identity rotation.
  static GaussianCloud with_size(std::size_t n, int sh_degree = 0);

  /// Throws ContractError on length mismatch, N == 0 or bad SH degree.
  void validate() const;

  /// Keeps the Gaussians whose keep flag is set, preserving order.
  void filter(const std::vector<bool> &keep);
  /// Appends a copy of Gaussian i.
  void duplicate(std::size_t i);

  void normalize_rotations();

  bool operator==(const GaussianCloud &) const = default;
};

/// Gradient with the same layout as GaussianCloud (time has no gradient).
struct CloudGradients {
  std::vector<Vec3> positions;
  std::vector<Quat> rotations;
  std::vector<Vec3> log_scales;
  std::vector<double> opacity_logits;
  std::vector<Vec3> sh_coeffs;
  std::vector<double> hallucination_logits;

  static CloudGradients zeros_like(const GaussianCloud &cloud);

  void add_scaled(const CloudGradients &other, double weight);
  bool all_zero() const;
  bool same_layout(const GaussianCloud &cloud) const;
};

/// Returns R S S^T R^T for Gaussian `index`.
Mat3 covariance(const GaussianCloud &cloud, std::size_t index);
Mat3 covariance(const Quat &rotation, const Vec3 &log_scale);

/// Normalized trivariate normal density at x.
double evaluate_gaussian_3d(const Vec3 &mean, const Mat3 &cov, const Vec3 &x);

// ---------------------------------------------------------------------------

/// Pinhole camera. world_to_camera maps world points to a frame whose +z
/// axis is the viewing direction.
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Mat4 world_to_camera = Mat4::Identity();
  int width = 0;
  int height = 0;

  Mat3 rotation() const { return world_to_camera.topLeftCorner<3, 3>(); }
  Vec3 translation() const { return world_to_camera.topRightCorner<3, 1>(); }
  /// Camera center in world coordinates.
  Vec3 center() const { return -rotation().transpose() * translation(); }
  Mat4 camera_to_world() const;

  /// Full projection: [fx 0 cx 0; 0 fy cy 0; 0 0 1 0; 0 0 0 1] * W. A world
  /// point p maps to pixel (h0/h2, h1/h2) with camera depth h2, h = P [p; 1].
  Mat4 projection() const;

  Vec3 to_camera(const Vec3 &world) const { return rotation() * world + translation(); }

  void validate() const;

  bool operator==(const Camera &) const = default;
};

enum class DepthSource : std::uint8_t { Invalid = 0, GroundTruth = 1, Filled = 2 };

/// One frame of input: color, depth, usable-pixel mask, optional disparity.
struct FrameObservation {
  ImageF image;                       // 3 channels, [0, 1]
  ImageF depth;                       // scene units, 0 where invalid
  Image<DepthSource> depth_source;    // which depth values are trustworthy
  Mask tool_mask;                     // 1 = usable tissue, 0 = tool / invalid
  std::optional<ImageF> disparity;    // pixels, 0 where unknown
  double time = 0.0;

  int width() const { return image.width(); }
  int height() const { return image.height(); }
  bool depth_valid(int x, int y) const { return depth_source(x, y) != DepthSource::Invalid; }

  /// Builds a frame whose depth validity is "depth > 0" and sources GT.
  static FrameObservation from_rgbd(ImageF image, ImageF depth, Mask tool_mask, double time);

  void validate() const;
};

} // namespace deformsplat
