#pragma once

#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace ctrlgs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

inline constexpr int kMaxShCoeffs = 4;       // degree <= 1
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr double kLowPassDilation = 0.3;  // px^2 added to the screen covariance diagonal

inline int sh_coeff_count(int degree) { return (degree + 1) * (degree + 1); }

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Canonical parameters of one Gaussian. Also used as the gradient and
/// optimizer-moment container so the three stay row-aligned.
struct GaussianParams {
  Vec3 mean = Vec3::Zero();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);  // (w, x, y, z)
  Vec3 log_scale = Vec3::Zero();
  double opacity_logit = 0.0;
  std::array<double, 3 * kMaxShCoeffs> sh{};  // sh[3 * k + channel]

  static GaussianParams zeros();

  Vec3 scale() const { return log_scale.array().exp().matrix(); }
  double opacity() const { return sigmoid(opacity_logit); }

  bool operator==(const GaussianParams&) const = default;
};

/// Calls fn(ParamClass-like index, pointer, count) for each field, in a fixed order.
template <class P, class Fn>
void for_each_field(P& p, Fn&& fn) {
  fn(0, p.mean.data(), 3);
  fn(1, p.rotation.data(), 4);
  fn(2, p.log_scale.data(), 3);
  fn(3, &p.opacity_logit, 1);
  fn(4, p.sh.data(), static_cast<int>(p.sh.size()));
}

struct GaussianSet {
  int sh_degree = 0;
  std::vector<GaussianParams> items;

  std::size_t size() const { return items.size(); }
  bool empty() const { return items.empty(); }
  bool operator==(const GaussianSet&) const = default;
};

/// Pinhole camera, OpenCV axis convention (x right, y down, z forward).
/// Pixel (i, j) is sampled at (i + 0.5, j + 0.5).
struct Camera {
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  double near_plane = 0.01;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 center() const { return -rotation.transpose() * translation; }

  /// Intrinsics and resolution divided by an integer factor.
  Camera downscaled(int factor) const;

  /// Throws kInvalidParameter if the rotation block is not a proper rotation
  /// or the near plane is not positive.
  void validate() const;

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_x_radians,
                        int width, int height, double near_plane = 0.01);

  bool operator==(const Camera&) const = default;
};

struct Covariance3D {
  Mat3 sigma = Mat3::Zero();
};

struct Conic2D {
  Mat2 sigma2d = Mat2::Zero();

  Mat2 inverse() const { return sigma2d.inverse(); }
};

/// Rotation matrix of a quaternion after normalization.
Mat3 quaternion_to_matrix(const Vec4& q);

/// Backpropagates dL/dR through normalization and the quaternion-to-matrix map.
Vec4 quaternion_to_matrix_backward(const Vec4& q, const Mat3& grad_rotation);

/// Sigma = R S S^T R^T. Scales are standard deviations (not log).
Covariance3D build_covariance(const Vec4& rotation, const Vec3& scale);

struct CovarianceGrad {
  Vec4 rotation = Vec4::Zero();
  Vec3 log_scale = Vec3::Zero();
};

/// Gradient of a symmetric loss-gradient dL/dSigma with respect to the
/// quaternion and the log-domain scale.
CovarianceGrad build_covariance_backward(const Vec4& rotation, const Vec3& log_scale,
                                         const Mat3& grad_sigma);

/// Perspective Jacobian rows [[fx/z, 0, -fx x/z^2], [0, fy/z, -fy y/z^2]].
Eigen::Matrix<double, 2, 3> perspective_jacobian(const Vec3& mean_cam, double fx, double fy);

/// Sigma' = J Sigma_cam J^T + dilation * I, with `cov_cam` already expressed in the
/// camera frame. Returns false (culled) when mean_cam.z() <= near_plane.
bool project_covariance(const Covariance3D& cov_cam, const Vec3& mean_cam, double fx, double fy,
                        double near_plane, Conic2D& out, double dilation = kLowPassDilation);

inline double gaussian_power(const Mat2& conic_inv, const Vec2& offset) {
  return -0.5 * offset.dot(conic_inv * offset);
}

inline double evaluate_gaussian(const Mat2& conic_inv, const Vec2& offset) {
  return std::exp(gaussian_power(conic_inv, offset));
}

struct ShColor {
  Vec3 rgb = Vec3::Zero();
  std::array<bool, 3> clamped{};  // channel hit the [0, 1] clamp
};

/// Evaluates degree <= 1 SH for `view_dir` (unit) and clamps each channel to [0, 1].
ShColor sh_to_color(const std::array<double, 3 * kMaxShCoeffs>& sh, int degree, const Vec3& view_dir);

/// Gradient of the clamped color with respect to the coefficients and the view direction.
void sh_to_color_backward(const std::array<double, 3 * kMaxShCoeffs>& sh, int degree,
                          const Vec3& view_dir, const ShColor& forward, const Vec3& grad_rgb,
                          std::array<double, 3 * kMaxShCoeffs>& grad_sh, Vec3& grad_dir);

/// Normalized quaternion; the zero quaternion maps to identity.
Vec4 normalized_quaternion(const Vec4& q);

}  // namespace ctrlgs
