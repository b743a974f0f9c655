#include "ctrlgs/geometry.hpp"

#include <string>

#include "ctrlgs/error.hpp"

namespace ctrlgs {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidParameter: return "invalid_parameter";
    case ErrorKind::kIngestion: return "ingestion_error";
    case ErrorKind::kUsage: return "usage_error";
    case ErrorKind::kLoad: return "load_error";
    case ErrorKind::kConfig: return "config_error";
    case ErrorKind::kNumeric: return "numeric_error";
    case ErrorKind::kIo: return "io_error";
  }
  return "error";
}

GaussianParams GaussianParams::zeros() {
  GaussianParams p;
  p.rotation.setZero();
  return p;
}

Camera Camera::downscaled(int factor) const {
  require(factor >= 1, ErrorKind::kInvalidParameter, "downscale factor must be >= 1");
  if (factor == 1) return *this;
  require(width % factor == 0 && height % factor == 0, ErrorKind::kInvalidParameter,
          "resolution " + std::to_string(width) + "x" + std::to_string(height) +
              " is not divisible by downscale factor " + std::to_string(factor));
  Camera c = *this;
  const double f = factor;
  c.fx /= f;
  c.fy /= f;
  c.cx /= f;
  c.cy /= f;
  c.width /= factor;
  c.height /= factor;
  return c;
}

void Camera::validate() const {
  require(rotation.allFinite() && translation.allFinite(), ErrorKind::kInvalidParameter,
          "camera extrinsics must be finite");
  require(std::abs(rotation.determinant() - 1.0) <= 1e-9, ErrorKind::kInvalidParameter,
          "camera rotation determinant must be +1");
  require((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9,
          ErrorKind::kInvalidParameter, "camera rotation must be orthonormal");
  require(near_plane > 0.0, ErrorKind::kInvalidParameter, "near_plane must be > 0");
  require(width > 0 && height > 0, ErrorKind::kInvalidParameter, "camera resolution must be positive");
  require(fx > 0.0 && fy > 0.0, ErrorKind::kInvalidParameter, "focal lengths must be positive");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_x_radians,
                       int width, int height, double near_plane) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Camera c;
  c.rotation.row(0) = right.transpose();
  c.rotation.row(1) = down.transpose();
  c.rotation.row(2) = forward.transpose();
  c.translation = -c.rotation * eye;
  c.width = width;
  c.height = height;
  c.fx = 0.5 * width / std::tan(0.5 * fov_x_radians);
  c.fy = c.fx;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.near_plane = near_plane;
  return c;
}

Vec4 normalized_quaternion(const Vec4& q) {
  const double n = q.norm();
  if (n == 0.0) return Vec4(1.0, 0.0, 0.0, 0.0);
  return q / n;
}

Mat3 quaternion_to_matrix(const Vec4& q_raw) {
  const Vec4 q = normalized_quaternion(q_raw);
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

Vec4 quaternion_to_matrix_backward(const Vec4& q_raw, const Mat3& g) {
  const double n = q_raw.norm();
  if (n == 0.0) return Vec4::Zero();
  const Vec4 q = q_raw / n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4 gq;
  gq[0] = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  gq[1] = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) +
                 z * g(2, 0) + w * g(2, 1) - 2.0 * x * g(2, 2));
  gq[2] = 2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                 w * g(2, 0) + z * g(2, 1) - 2.0 * y * g(2, 2));
  gq[3] = 2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) +
                 y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
  // Through q / |q|.
  return (gq - q * q.dot(gq)) / n;
}

Covariance3D build_covariance(const Vec4& rotation, const Vec3& scale) {
  require(rotation.allFinite() && scale.allFinite(), ErrorKind::kInvalidParameter,
          "build_covariance: non-finite rotation or scale");
  const Mat3 r = quaternion_to_matrix(rotation);
  const Mat3 m = r * scale.asDiagonal();
  return Covariance3D{m * m.transpose()};
}

CovarianceGrad build_covariance_backward(const Vec4& rotation, const Vec3& log_scale,
                                         const Mat3& grad_sigma) {
  const Mat3 r = quaternion_to_matrix(rotation);
  const Vec3 s = log_scale.array().exp().matrix();
  const Mat3 m = r * s.asDiagonal();
  // Sigma = M M^T  =>  dL/dM = (G + G^T) M
  const Mat3 gm = (grad_sigma + grad_sigma.transpose()) * m;
  CovarianceGrad out;
  const Mat3 gr = gm * s.asDiagonal();
  for (int k = 0; k < 3; ++k) out.log_scale[k] = gm.col(k).dot(r.col(k)) * s[k];
  out.rotation = quaternion_to_matrix_backward(rotation, gr);
  return out;
}

Eigen::Matrix<double, 2, 3> perspective_jacobian(const Vec3& p, double fx, double fy) {
  const double inv_z = 1.0 / p.z();
  const double inv_z2 = inv_z * inv_z;
  Eigen::Matrix<double, 2, 3> j;
  j << fx * inv_z, 0.0, -fx * p.x() * inv_z2, 0.0, fy * inv_z, -fy * p.y() * inv_z2;
  return j;
}

bool project_covariance(const Covariance3D& cov_cam, const Vec3& mean_cam, double fx, double fy,
                        double near_plane, Conic2D& out, double dilation) {
  if (!(mean_cam.z() > near_plane)) return false;
  const auto j = perspective_jacobian(mean_cam, fx, fy);
  out.sigma2d = j * cov_cam.sigma * j.transpose();
  out.sigma2d(0, 0) += dilation;
  out.sigma2d(1, 1) += dilation;
  return true;
}

namespace {

void sh_basis(int degree, const Vec3& d, std::array<double, kMaxShCoeffs>& basis) {
  basis[0] = kShC0;
  if (degree >= 1) {
    basis[1] = -kShC1 * d.y();
    basis[2] = kShC1 * d.z();
    basis[3] = -kShC1 * d.x();
  }
}

void check_degree(int degree) {
  require(degree >= 0 && degree <= 1, ErrorKind::kConfig,
          "unsupported SH degree " + std::to_string(degree) + " (max 1)");
}

}  // namespace

ShColor sh_to_color(const std::array<double, 3 * kMaxShCoeffs>& sh, int degree, const Vec3& view_dir) {
  check_degree(degree);
  std::array<double, kMaxShCoeffs> basis{};
  sh_basis(degree, view_dir, basis);
  const int k = sh_coeff_count(degree);
  ShColor out;
  for (int c = 0; c < 3; ++c) {
    double v = 0.0;
    for (int i = 0; i < k; ++i) v += basis[i] * sh[3 * i + c];
    if (v < 0.0) {
      v = 0.0;
      out.clamped[c] = true;
    } else if (v > 1.0) {
      v = 1.0;
      out.clamped[c] = true;
    }
    out.rgb[c] = v;
  }
  return out;
}

void sh_to_color_backward(const std::array<double, 3 * kMaxShCoeffs>& sh, int degree,
                          const Vec3& view_dir, const ShColor& forward, const Vec3& grad_rgb,
                          std::array<double, 3 * kMaxShCoeffs>& grad_sh, Vec3& grad_dir) {
  std::array<double, kMaxShCoeffs> basis{};
  sh_basis(degree, view_dir, basis);
  const int k = sh_coeff_count(degree);
  grad_dir.setZero();
  for (int c = 0; c < 3; ++c) {
    if (forward.clamped[c]) continue;
    const double g = grad_rgb[c];
    for (int i = 0; i < k; ++i) grad_sh[3 * i + c] += basis[i] * g;
    if (degree >= 1) {
      grad_dir.y() += -kShC1 * sh[3 * 1 + c] * g;
      grad_dir.z() += kShC1 * sh[3 * 2 + c] * g;
      grad_dir.x() += -kShC1 * sh[3 * 3 + c] * g;
    }
  }
}

}  // namespace ctrlgs
