#include "deformsplat/core_model.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <string>

namespace deformsplat {

Quat quat_identity() { return Quat(1.0, 0.0, 0.0, 0.0); }

Quat quat_normalized(const Quat &q) { return q / q.norm(); }

Quat quat_multiply(const Quat &a, const Quat &b) {
  return Quat(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

Quat quat_conjugate(const Quat &q) { return Quat(q[0], -q[1], -q[2], -q[3]); }

Quat quat_from_axis_angle(const Vec3 &axis, double angle) {
  const Vec3 a = axis.normalized() * std::sin(0.5 * angle);
  return Quat(std::cos(0.5 * angle), a.x(), a.y(), a.z());
}

Mat3 rotation_matrix(const Quat &raw) {
  const Quat q = quat_normalized(raw);
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Quat normalize_backward(const Quat &q, const Quat &grad_normalized) {
  const double norm = q.norm();
  const Quat n = q / norm;
  return (grad_normalized - n * n.dot(grad_normalized)) / norm;
}

Quat rotation_matrix_backward(const Quat &raw, const Mat3 &g) {
  const Quat q = quat_normalized(raw);
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Quat dq;
  dq[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  dq[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
               z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
  dq[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
               w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
  dq[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
               y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  return normalize_backward(raw, dq);
}

// ---------------------------------------------------------------------------

namespace {

constexpr double kC1 = 0.4886025119029199;
constexpr std::array<double, 5> kC2 = {1.0925484305920792, -1.0925484305920792,
                                       0.31539156525252005, -1.0925484305920792,
                                       0.5462742152960396};
constexpr std::array<double, 7> kC3 = {-0.5900435899266435, 2.890611442640554,
                                       -0.4570457994644658, 0.3731763325901154,
                                       -0.4570457994644658, 1.445305721320277,
                                       -0.5900435899266435};

struct ShBasis {
  std::array<double, 16> value{};
  std::array<Vec3, 16> grad{};
};

// Basis values and their partial derivatives with respect to the (unit)
// direction components.
ShBasis sh_basis(int degree, const Vec3 &d) {
  ShBasis b;
  b.value[0] = kShC0;
  b.grad[0] = Vec3::Zero();
  if (degree < 1)
    return b;
  const double x = d.x(), y = d.y(), z = d.z();
  b.value[1] = -kC1 * y;
  b.grad[1] = Vec3(0, -kC1, 0);
  b.value[2] = kC1 * z;
  b.grad[2] = Vec3(0, 0, kC1);
  b.value[3] = -kC1 * x;
  b.grad[3] = Vec3(-kC1, 0, 0);
  if (degree < 2)
    return b;
  const double xx = x * x, yy = y * y, zz = z * z;
  b.value[4] = kC2[0] * x * y;
  b.grad[4] = Vec3(kC2[0] * y, kC2[0] * x, 0);
  b.value[5] = kC2[1] * y * z;
  b.grad[5] = Vec3(0, kC2[1] * z, kC2[1] * y);
  b.value[6] = kC2[2] * (2 * zz - xx - yy);
  b.grad[6] = Vec3(-2 * kC2[2] * x, -2 * kC2[2] * y, 4 * kC2[2] * z);
  b.value[7] = kC2[3] * x * z;
  b.grad[7] = Vec3(kC2[3] * z, 0, kC2[3] * x);
  b.value[8] = kC2[4] * (xx - yy);
  b.grad[8] = Vec3(2 * kC2[4] * x, -2 * kC2[4] * y, 0);
  if (degree < 3)
    return b;
  b.value[9] = kC3[0] * y * (3 * xx - yy);
  b.grad[9] = Vec3(6 * kC3[0] * x * y, kC3[0] * (3 * xx - 3 * yy), 0);
  b.value[10] = kC3[1] * x * y * z;
  b.grad[10] = Vec3(kC3[1] * y * z, kC3[1] * x * z, kC3[1] * x * y);
  b.value[11] = kC3[2] * y * (4 * zz - xx - yy);
  b.grad[11] = Vec3(-2 * kC3[2] * x * y, kC3[2] * (4 * zz - xx - 3 * yy), 8 * kC3[2] * y * z);
  b.value[12] = kC3[3] * z * (2 * zz - 3 * xx - 3 * yy);
  b.grad[12] = Vec3(-6 * kC3[3] * x * z, -6 * kC3[3] * y * z, kC3[3] * (6 * zz - 3 * xx - 3 * yy));
  b.value[13] = kC3[4] * x * (4 * zz - xx - yy);
  b.grad[13] = Vec3(kC3[4] * (4 * zz - 3 * xx - yy), -2 * kC3[4] * x * y, 8 * kC3[4] * x * z);
  b.value[14] = kC3[5] * z * (xx - yy);
  b.grad[14] = Vec3(2 * kC3[5] * x * z, -2 * kC3[5] * y * z, kC3[5] * (xx - yy));
  b.value[15] = kC3[6] * x * (xx - 3 * yy);
  b.grad[15] = Vec3(kC3[6] * (3 * xx - 3 * yy), -6 * kC3[6] * x * y, 0);
  return b;
}

} // namespace

Vec3 sh_to_color(int degree, std::span<const Vec3> coeffs, const Vec3 &dir) {
  const ShBasis basis = sh_basis(degree, dir);
  Vec3 color = Vec3::Constant(0.5);
  for (int k = 0; k < sh_coeff_count(degree); ++k)
    color += basis.value[k] * coeffs[k];
  return color;
}

Vec3 sh_to_color_backward(int degree, std::span<const Vec3> coeffs, const Vec3 &dir,
                          const Vec3 &grad_color, std::span<Vec3> grad_coeffs) {
  const ShBasis basis = sh_basis(degree, dir);
  Vec3 grad_dir = Vec3::Zero();
  for (int k = 0; k < sh_coeff_count(degree); ++k) {
    grad_coeffs[k] += basis.value[k] * grad_color;
    grad_dir += grad_color.dot(coeffs[k]) * basis.grad[k];
  }
  return grad_dir;
}

Vec3 rgb_to_sh0(const Vec3 &rgb) { return (rgb - Vec3::Constant(0.5)) / kShC0; }

// ---------------------------------------------------------------------------

GaussianCloud GaussianCloud::with_size(std::size_t n, int sh_degree) {
  GaussianCloud c;
  c.sh_degree = sh_degree;
  c.positions.assign(n, Vec3::Zero());
  c.rotations.assign(n, quat_identity());
  c.log_scales.assign(n, Vec3::Zero());
  c.opacity_logits.assign(n, 0.0);
  c.sh_coeffs.assign(n * sh_coeff_count(sh_degree), Vec3::Zero());
  c.hallucination_logits.assign(n, 0.0);
  return c;
}

void GaussianCloud::validate() const {
  const std::size_t n = positions.size();
  if (n == 0)
    throw ContractError("Gaussian cloud is empty");
  if (sh_degree < 0 || sh_degree > kMaxShDegree)
    throw ContractError("SH degree must be in [0, 3], got " + std::to_string(sh_degree));
  if (rotations.size() != n || log_scales.size() != n || opacity_logits.size() != n ||
      hallucination_logits.size() != n ||
      sh_coeffs.size() != n * static_cast<std::size_t>(coeffs_per_gaussian()))
    throw ContractError("Gaussian cloud arrays have inconsistent lengths");
}

void GaussianCloud::filter(const std::vector<bool> &keep) {
  if (keep.size() != size())
    throw ContractError("filter mask length differs from cloud size");
  const std::size_t per = coeffs_per_gaussian();
  std::size_t out = 0;
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (!keep[i])
      continue;
    positions[out] = positions[i];
    rotations[out] = rotations[i];
    log_scales[out] = log_scales[i];
    opacity_logits[out] = opacity_logits[i];
    hallucination_logits[out] = hallucination_logits[i];
    for (std::size_t k = 0; k < per; ++k)
      sh_coeffs[out * per + k] = sh_coeffs[i * per + k];
    ++out;
  }
  positions.resize(out);
  rotations.resize(out);
  log_scales.resize(out);
  opacity_logits.resize(out);
  hallucination_logits.resize(out);
  sh_coeffs.resize(out * per);
}

void GaussianCloud::duplicate(std::size_t i) {
  positions.push_back(positions[i]);
  rotations.push_back(rotations[i]);
  log_scales.push_back(log_scales[i]);
  opacity_logits.push_back(opacity_logits[i]);
  hallucination_logits.push_back(hallucination_logits[i]);
  const std::size_t per = coeffs_per_gaussian();
  for (std::size_t k = 0; k < per; ++k)
    sh_coeffs.push_back(sh_coeffs[i * per + k]);
}

void GaussianCloud::normalize_rotations() {
  for (auto &q : rotations)
    q = quat_normalized(q);
}

CloudGradients CloudGradients::zeros_like(const GaussianCloud &cloud) {
  CloudGradients g;
  const std::size_t n = cloud.size();
  g.positions.assign(n, Vec3::Zero());
  g.rotations.assign(n, Quat::Zero());
  g.log_scales.assign(n, Vec3::Zero());
  g.opacity_logits.assign(n, 0.0);
  g.sh_coeffs.assign(cloud.sh_coeffs.size(), Vec3::Zero());
  g.hallucination_logits.assign(n, 0.0);
  return g;
}

void CloudGradients::add_scaled(const CloudGradients &o, double weight) {
  if (o.positions.size() != positions.size() || o.sh_coeffs.size() != sh_coeffs.size())
    throw ContractError("gradient layouts differ");
  for (std::size_t i = 0; i < positions.size(); ++i) {
    positions[i] += weight * o.positions[i];
    rotations[i] += weight * o.rotations[i];
    log_scales[i] += weight * o.log_scales[i];
    opacity_logits[i] += weight * o.opacity_logits[i];
    hallucination_logits[i] += weight * o.hallucination_logits[i];
  }
  for (std::size_t k = 0; k < sh_coeffs.size(); ++k)
    sh_coeffs[k] += weight * o.sh_coeffs[k];
}

bool CloudGradients::all_zero() const {
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (!positions[i].isZero(0) || !rotations[i].isZero(0) || !log_scales[i].isZero(0) ||
        opacity_logits[i] != 0.0 || hallucination_logits[i] != 0.0)
      return false;
  }
  for (const auto &c : sh_coeffs)
    if (!c.isZero(0))
      return false;
  return true;
}

bool CloudGradients::same_layout(const GaussianCloud &cloud) const {
  const std::size_t n = cloud.size();
  return positions.size() == n && rotations.size() == n && log_scales.size() == n &&
         opacity_logits.size() == n && hallucination_logits.size() == n &&
         sh_coeffs.size() == cloud.sh_coeffs.size();
}

// ---------------------------------------------------------------------------

Mat3 covariance(const Quat &rotation, const Vec3 &log_scale) {
  const Mat3 m = rotation_matrix(rotation) * log_scale.array().exp().matrix().asDiagonal();
  return m * m.transpose();
}

Mat3 covariance(const GaussianCloud &cloud, std::size_t index) {
  if (index >= cloud.size())
    throw IndexError("Gaussian index " + std::to_string(index) + " out of range (N = " +
                     std::to_string(cloud.size()) + ")");
  return covariance(cloud.rotations[index], cloud.log_scales[index]);
}

double evaluate_gaussian_3d(const Vec3 &mean, const Mat3 &cov, const Vec3 &x) {
  const Eigen::LLT<Mat3> llt(cov);
  if (llt.info() != Eigen::Success || !(cov.determinant() > 0.0))
    throw DegenerateCovarianceError("covariance is not positive definite");
  const Vec3 d = x - mean;
  const double mahalanobis = d.dot(llt.solve(d));
  const Mat3 l = llt.matrixL();
  const double sqrt_det = l(0, 0) * l(1, 1) * l(2, 2);
  return std::exp(-0.5 * mahalanobis) / (std::pow(2.0 * std::numbers::pi, 1.5) * sqrt_det);
}

// ---------------------------------------------------------------------------

Mat4 Camera::camera_to_world() const {
  Mat4 inv = Mat4::Identity();
  inv.topLeftCorner<3, 3>() = rotation().transpose();
  inv.topRightCorner<3, 1>() = center();
  return inv;
}

Mat4 Camera::projection() const {
  Mat4 k = Mat4::Identity();
  k(0, 0) = fx;
  k(0, 2) = cx;
  k(1, 1) = fy;
  k(1, 2) = cy;
  return k * world_to_camera;
}

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0))
    throw ContractError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0)
    throw ContractError("camera image size must be positive");
  const Mat3 r = rotation();
  if (!(r * r.transpose()).isApprox(Mat3::Identity(), 1e-9) || r.determinant() <= 0.0)
    throw ContractError("world_to_camera rotation block is not a proper rotation");
  if (world_to_camera.row(3) != Eigen::RowVector4d(0, 0, 0, 1))
    throw ContractError("world_to_camera last row must be (0, 0, 0, 1)");
}

FrameObservation FrameObservation::from_rgbd(ImageF image, ImageF depth, Mask tool_mask,
                                             double time) {
  FrameObservation f;
  f.depth_source = Image<DepthSource>(depth.width(), depth.height(), 1, DepthSource::Invalid);
  for (int y = 0; y < depth.height(); ++y)
    for (int x = 0; x < depth.width(); ++x)
      if (depth(x, y) > 0.0 && std::isfinite(depth(x, y)))
        f.depth_source(x, y) = DepthSource::GroundTruth;
  f.image = std::move(image);
  f.depth = std::move(depth);
  f.tool_mask = std::move(tool_mask);
  f.time = time;
  return f;
}

void FrameObservation::validate() const {
  const int w = width(), h = height();
  if (image.channels() != 3)
    throw ContractError("frame image must have 3 channels");
  if (!depth.same_shape(w, h) || !tool_mask.same_shape(w, h) || !depth_source.same_shape(w, h))
    throw ContractError("frame channels have mismatched dimensions");
  if (disparity && !disparity->same_shape(w, h))
    throw ContractError("disparity map has mismatched dimensions");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const DepthSource s = depth_source(x, y);
      if (s != DepthSource::Invalid && !(depth(x, y) > 0.0))
        throw ContractError("valid depth must be positive");
      if (s == DepthSource::Filled && (!disparity || !((*disparity)(x, y) > 0.0)))
        throw ContractError("filled depth without disparity");
    }
}

} // namespace deformsplat
