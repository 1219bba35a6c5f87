#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace deftrack {

using Vector6d = Eigen::Matrix<double, 6, 1>;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a point cannot be projected because it lies behind the camera.
class BehindCameraError : public GeometryError {
 public:
  using GeometryError::GeometryError;
};

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> skew(
    const Eigen::MatrixBase<Derived>& v) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 3);
  using Scalar = typename Derived::Scalar;
  Eigen::Matrix<Scalar, 3, 3> m;
  m << Scalar(0), -v(2), v(1),
       v(2), Scalar(0), -v(0),
       -v(1), v(0), Scalar(0);
  return m;
}

/// Rodrigues' formula. Uses the second-order expansion near the identity.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> so3_exp(
    const Eigen::MatrixBase<Derived>& phi) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 3);
  using Scalar = typename Derived::Scalar;
  using std::cos;
  using std::sin;
  using std::sqrt;
  const Scalar theta_sq = phi.squaredNorm();
  const Eigen::Matrix<Scalar, 3, 3> phi_hat = skew(phi);
  Scalar a, b;
  if (theta_sq < Scalar(1e-16)) {
    a = Scalar(1) - theta_sq / Scalar(6);
    b = Scalar(0.5) - theta_sq / Scalar(24);
  } else {
    const Scalar theta = sqrt(theta_sq);
    a = sin(theta) / theta;
    b = (Scalar(1) - cos(theta)) / theta_sq;
  }
  return Eigen::Matrix<Scalar, 3, 3>::Identity() + a * phi_hat +
         b * phi_hat * phi_hat;
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 1> so3_log(
    const Eigen::MatrixBase<Derived>& rotation) {
  using Scalar = typename Derived::Scalar;
  const Eigen::AngleAxis<Scalar> aa{Eigen::Matrix<Scalar, 3, 3>(rotation)};
  return aa.angle() * aa.axis();
}

/// Angle of a rotation matrix in radians, in [0, pi].
template <typename Derived>
typename Derived::Scalar rotation_angle(const Eigen::MatrixBase<Derived>& r) {
  using Scalar = typename Derived::Scalar;
  const Scalar c = std::clamp((r.trace() - Scalar(1)) / Scalar(2), Scalar(-1),
                              Scalar(1));
  // acos loses precision near zero; atan2 of the skew part does not.
  const Scalar s = Scalar(0.5) * Eigen::Matrix<Scalar, 3, 1>(
                                     r(2, 1) - r(1, 2), r(0, 2) - r(2, 0),
                                     r(1, 0) - r(0, 1))
                                     .norm();
  return std::atan2(s, c);
}

/// Closest rotation matrix in the Frobenius sense.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, 3, 3> orthonormalize(
    const Eigen::MatrixBase<Derived>& r) {
  using Scalar = typename Derived::Scalar;
  Eigen::Quaternion<Scalar> q{Eigen::Matrix<Scalar, 3, 3>(r)};
  q.normalize();
  return q.toRotationMatrix();
}

/// Rigid transform x' = R x + t. Poses in this library map world (camera-0)
/// coordinates into camera coordinates.
template <typename Scalar>
class PoseT {
 public:
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
  using Vector3 = Eigen::Matrix<Scalar, 3, 1>;

  PoseT() : rotation_(Matrix3::Identity()), translation_(Vector3::Zero()) {}
  PoseT(const Matrix3& rotation, const Vector3& translation)
      : rotation_(rotation), translation_(translation) {}
  PoseT(const Eigen::Quaternion<Scalar>& q, const Vector3& translation)
      : rotation_(q.normalized().toRotationMatrix()),
        translation_(translation) {}

  static PoseT identity() { return PoseT(); }

  const Matrix3& rotation() const { return rotation_; }
  const Vector3& translation() const { return translation_; }
  Eigen::Quaternion<Scalar> quaternion() const {
    return Eigen::Quaternion<Scalar>(rotation_).normalized();
  }

  /// Position of the camera centre expressed in world coordinates.
  Vector3 center() const { return -rotation_.transpose() * translation_; }

  template <typename Derived>
  Vector3 operator*(const Eigen::MatrixBase<Derived>& p) const {
    return rotation_ * p + translation_;
  }

  PoseT operator*(const PoseT& other) const {
    PoseT out(rotation_ * other.rotation_,
              rotation_ * other.translation_ + translation_);
    out.renormalize_if_drifted();
    return out;
  }

  PoseT inverse() const {
    const Matrix3 rt = rotation_.transpose();
    return PoseT(rt, -rt * translation_);
  }

  template <typename Other>
  PoseT<Other> cast() const {
    return PoseT<Other>(rotation_.template cast<Other>(),
                        translation_.template cast<Other>());
  }

 private:
  void renormalize_if_drifted() {
    const Scalar drift =
        (rotation_.transpose() * rotation_ - Matrix3::Identity())
            .cwiseAbs()
            .maxCoeff();
    if (drift > Scalar(1e-12)) rotation_ = orthonormalize(rotation_);
  }

  Matrix3 rotation_;
  Vector3 translation_;
};

using Pose = PoseT<double>;

/// Exponential map of a twist (rho, phi): translation part first, rotation
/// part last.
template <typename Derived>
PoseT<typename Derived::Scalar> se3_exp(const Eigen::MatrixBase<Derived>& xi) {
  EIGEN_STATIC_ASSERT_VECTOR_SPECIFIC_SIZE(Derived, 6);
  using Scalar = typename Derived::Scalar;
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
  const Eigen::Matrix<Scalar, 3, 1> rho = xi.template head<3>();
  const Eigen::Matrix<Scalar, 3, 1> phi = xi.template tail<3>();
  const Scalar theta_sq = phi.squaredNorm();
  const Matrix3 phi_hat = skew(phi);
  Scalar b, c;
  if (theta_sq < Scalar(1e-16)) {
    b = Scalar(0.5) - theta_sq / Scalar(24);
    c = Scalar(1) / Scalar(6) - theta_sq / Scalar(120);
  } else {
    const Scalar theta = std::sqrt(theta_sq);
    b = (Scalar(1) - std::cos(theta)) / theta_sq;
    c = (theta - std::sin(theta)) / (theta_sq * theta);
  }
  const Matrix3 v = Matrix3::Identity() + b * phi_hat + c * phi_hat * phi_hat;
  return PoseT<Scalar>(so3_exp(phi), v * rho);
}

template <typename Scalar>
Eigen::Matrix<Scalar, 6, 1> se3_log(const PoseT<Scalar>& pose) {
  using Matrix3 = Eigen::Matrix<Scalar, 3, 3>;
  const Eigen::Matrix<Scalar, 3, 1> phi = so3_log(pose.rotation());
  const Scalar theta_sq = phi.squaredNorm();
  const Matrix3 phi_hat = skew(phi);
  Scalar d;
  if (theta_sq < Scalar(1e-16)) {
    d = Scalar(1) / Scalar(12) + theta_sq / Scalar(720);
  } else {
    const Scalar theta = std::sqrt(theta_sq);
    d = (Scalar(1) -
         theta * std::sin(theta) / (Scalar(2) * (Scalar(1) - std::cos(theta)))) /
        theta_sq;
  }
  const Matrix3 v_inv =
      Matrix3::Identity() - Scalar(0.5) * phi_hat + d * phi_hat * phi_hat;
  Eigen::Matrix<Scalar, 6, 1> xi;
  xi << v_inv * pose.translation(), phi;
  return xi;
}

enum class CameraKind { kPinhole, kFisheye };

/// Intrinsics plus lens distortion. Pinhole distortion is radial-tangential
/// in the order (k1, k2, p1, p2, k3); fisheye is the equidistant model with
/// (k1, k2, k3, k4). Missing coefficients are zero.
struct CameraModel {
  CameraKind kind = CameraKind::kPinhole;
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::vector<double> distortion;
  int width = 0;
  int height = 0;

  static CameraModel pinhole(double fx, double fy, double cx, double cy,
                             int width, int height,
                             std::vector<double> distortion = {});
  static CameraModel fisheye(double fx, double fy, double cx, double cy,
                             int width, int height,
                             std::vector<double> distortion);

  /// Throws GeometryError on non-positive focal lengths, principal point
  /// outside the image or too many distortion coefficients.
  void validate() const;

  double coefficient(std::size_t i) const {
    return i < distortion.size() ? distortion[i] : 0.0;
  }
  bool in_bounds(const Eigen::Vector2d& pixel, double margin = 0.0) const {
    return pixel.x() >= margin && pixel.y() >= margin &&
           pixel.x() <= width - 1 - margin && pixel.y() <= height - 1 - margin;
  }
};

/// Projects a camera-frame point to pixels. The optional Jacobian is
/// d(pixel)/d(point). Throws BehindCameraError when the pinhole depth is not
/// positive or the fisheye point is at the origin.
Eigen::Vector2d project(const CameraModel& camera, const Eigen::Vector3d& point,
                        Eigen::Matrix<double, 2, 3>* jacobian = nullptr);

/// Unit ray through a pixel.
Eigen::Vector3d unproject(const CameraModel& camera,
                          const Eigen::Vector2d& pixel);

}  // namespace deftrack
