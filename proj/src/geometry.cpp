#include "deftrack/geometry.hpp"

#include <sstream>

namespace deftrack {

namespace {

constexpr int kMaxUndistortIterations = 10;
constexpr double kUndistortTolerance = 1e-8;

// Radial-tangential distortion of a normalized image point, with Jacobian.
Eigen::Vector2d distort_radtan(const CameraModel& c, const Eigen::Vector2d& p,
                               Eigen::Matrix2d* jac) {
  const double k1 = c.coefficient(0), k2 = c.coefficient(1);
  const double p1 = c.coefficient(2), p2 = c.coefficient(3);
  const double k3 = c.coefficient(4);
  const double x = p.x(), y = p.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
  Eigen::Vector2d out(x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
                      y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y);
  if (jac != nullptr) {
    const double dradial = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2);
    (*jac)(0, 0) = radial + 2.0 * x * x * dradial + 2.0 * p1 * y + 6.0 * p2 * x;
    (*jac)(0, 1) = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
    (*jac)(1, 0) = 2.0 * x * y * dradial + 2.0 * p1 * x + 2.0 * p2 * y;
    (*jac)(1, 1) = radial + 2.0 * y * y * dradial + 6.0 * p1 * y + 2.0 * p2 * x;
  }
  return out;
}

// theta_d(theta) of the equidistant model and its derivative.
double fisheye_theta_d(const CameraModel& c, double theta, double* derivative) {
  const double t2 = theta * theta;
  const double k1 = c.coefficient(0), k2 = c.coefficient(1);
  const double k3 = c.coefficient(2), k4 = c.coefficient(3);
  const double poly = 1.0 + t2 * (k1 + t2 * (k2 + t2 * (k3 + t2 * k4)));
  if (derivative != nullptr) {
    *derivative =
        1.0 + t2 * (3.0 * k1 + t2 * (5.0 * k2 + t2 * (7.0 * k3 + t2 * 9.0 * k4)));
  }
  return theta * poly;
}

Eigen::Vector2d project_pinhole(const CameraModel& c, const Eigen::Vector3d& p,
                                Eigen::Matrix<double, 2, 3>* jacobian) {
  if (!(p.z() > 0.0)) {
    std::ostringstream msg;
    msg << "point behind pinhole camera (depth " << p.z() << ")";
    throw BehindCameraError(msg.str());
  }
  const double inv_z = 1.0 / p.z();
  const Eigen::Vector2d normalized(p.x() * inv_z, p.y() * inv_z);
  Eigen::Matrix2d djac;
  const Eigen::Vector2d d =
      distort_radtan(c, normalized, jacobian != nullptr ? &djac : nullptr);
  if (jacobian != nullptr) {
    Eigen::Matrix<double, 2, 3> dn;
    dn << inv_z, 0.0, -p.x() * inv_z * inv_z,
          0.0, inv_z, -p.y() * inv_z * inv_z;
    const Eigen::Matrix2d f = Eigen::Vector2d(c.fx, c.fy).asDiagonal();
    *jacobian = f * djac * dn;
  }
  return {c.fx * d.x() + c.cx, c.fy * d.y() + c.cy};
}

Eigen::Vector2d project_fisheye(const CameraModel& c, const Eigen::Vector3d& p,
                                Eigen::Matrix<double, 2, 3>* jacobian) {
  const double n2 = p.squaredNorm();
  if (!(n2 > 0.0)) throw BehindCameraError("fisheye projection of the origin");
  const double rho = std::hypot(p.x(), p.y());
  if (rho < 1e-12 * std::sqrt(n2)) {
    // On the optical axis the model is locally a pinhole with unit scale.
    if (p.z() < 0.0) throw BehindCameraError("point on the negative optical axis");
    if (jacobian != nullptr) {
      const double inv_z = 1.0 / p.z();
      *jacobian << c.fx * inv_z, 0.0, 0.0, 0.0, c.fy * inv_z, 0.0;
    }
    return {c.cx, c.cy};
  }
  const double theta = std::atan2(rho, p.z());
  double dtd = 0.0;
  const double td = fisheye_theta_d(c, theta, &dtd);
  const double m = td / rho;
  if (jacobian != nullptr) {
    // dtheta/dX = Z X / (rho n^2), dtheta/dZ = -rho / n^2.
    const Eigen::Vector3d dtheta(p.z() * p.x() / (rho * n2),
                                 p.z() * p.y() / (rho * n2), -rho / n2);
    const Eigen::Vector3d drho(p.x() / rho, p.y() / rho, 0.0);
    const Eigen::Vector3d dm = (dtd * dtheta * rho - td * drho) / (rho * rho);
    Eigen::Matrix<double, 2, 3> dxy;
    dxy.row(0) = p.x() * dm.transpose();
    dxy.row(1) = p.y() * dm.transpose();
    dxy(0, 0) += m;
    dxy(1, 1) += m;
    jacobian->row(0) = c.fx * dxy.row(0);
    jacobian->row(1) = c.fy * dxy.row(1);
  }
  return {c.fx * m * p.x() + c.cx, c.fy * m * p.y() + c.cy};
}

Eigen::Vector3d unproject_pinhole(const CameraModel& c,
                                  const Eigen::Vector2d& pixel) {
  const Eigen::Vector2d distorted((pixel.x() - c.cx) / c.fx,
                                  (pixel.y() - c.cy) / c.fy);
  Eigen::Vector2d x = distorted;
  if (!c.distortion.empty()) {
    for (int it = 0; it < kMaxUndistortIterations; ++it) {
      Eigen::Matrix2d jac;
      const Eigen::Vector2d err = distort_radtan(c, x, &jac) - distorted;
      const Eigen::Vector2d step = jac.partialPivLu().solve(err);
      x -= step;
      if (step.norm() < kUndistortTolerance) break;
    }
  }
  return Eigen::Vector3d(x.x(), x.y(), 1.0).normalized();
}

Eigen::Vector3d unproject_fisheye(const CameraModel& c,
                                  const Eigen::Vector2d& pixel) {
  const Eigen::Vector2d xy((pixel.x() - c.cx) / c.fx, (pixel.y() - c.cy) / c.fy);
  const double td = xy.norm();
  if (td < 1e-15) return Eigen::Vector3d::UnitZ();
  double theta = td;
  for (int it = 0; it < kMaxUndistortIterations; ++it) {
    double deriv = 1.0;
    const double err = fisheye_theta_d(c, theta, &deriv) - td;
    const double step = err / deriv;
    theta -= step;
    if (std::abs(step) < kUndistortTolerance) break;
  }
  const double s = std::sin(theta) / td;
  return Eigen::Vector3d(s * xy.x(), s * xy.y(), std::cos(theta));
}

}  // namespace

CameraModel CameraModel::pinhole(double fx, double fy, double cx, double cy,
                                 int width, int height,
                                 std::vector<double> distortion) {
  CameraModel c;
  c.kind = CameraKind::kPinhole;
  c.fx = fx;
  c.fy = fy;
  c.cx = cx;
  c.cy = cy;
  c.width = width;
  c.height = height;
  c.distortion = std::move(distortion);
  c.validate();
  return c;
}

CameraModel CameraModel::fisheye(double fx, double fy, double cx, double cy,
                                 int width, int height,
                                 std::vector<double> distortion) {
  CameraModel c = pinhole(fx, fy, cx, cy, width, height);
  c.kind = CameraKind::kFisheye;
  c.distortion = std::move(distortion);
  c.validate();
  return c;
}

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw GeometryError("focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw GeometryError("image dimensions must be positive");
  }
  if (cx < 0.0 || cy < 0.0 || cx > width || cy > height) {
    throw GeometryError("principal point outside the image");
  }
  const std::size_t max_coeffs = kind == CameraKind::kPinhole ? 5 : 4;
  if (distortion.size() > max_coeffs) {
    std::ostringstream msg;
    msg << "too many distortion coefficients (" << distortion.size()
        << ", at most " << max_coeffs << ")";
    throw GeometryError(msg.str());
  }
}

Eigen::Vector2d project(const CameraModel& camera, const Eigen::Vector3d& point,
                        Eigen::Matrix<double, 2, 3>* jacobian) {
  return camera.kind == CameraKind::kPinhole
             ? project_pinhole(camera, point, jacobian)
             : project_fisheye(camera, point, jacobian);
}

Eigen::Vector3d unproject(const CameraModel& camera,
                          const Eigen::Vector2d& pixel) {
  return camera.kind == CameraKind::kPinhole ? unproject_pinhole(camera, pixel)
                                             : unproject_fisheye(camera, pixel);
}

}  // namespace deftrack
