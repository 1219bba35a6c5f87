#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "deftrack/calibration.hpp"
#include "deftrack/geometry.hpp"
#include "deftrack/io.hpp"

using namespace deftrack;

namespace {

constexpr double kPi = std::numbers::pi;

// Bisection on theta -> theta_d(theta) - target over [0, pi).
double invert_equidistant(double theta_d, const std::vector<double>& k) {
  auto poly = [&](double t) {
    const double t2 = t * t;
    return t * (1 + k[0] * t2 + k[1] * t2 * t2 + k[2] * t2 * t2 * t2 +
                k[3] * t2 * t2 * t2 * t2);
  };
  double lo = 0.0, hi = 0.5 * kPi;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (poly(mid) < theta_d ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

TEST_CASE("pinhole projection of the optical axis lands on the principal point") {
  const CameraModel cam = CameraModel::pinhole(400, 400, 320, 320, 640, 640);
  const Eigen::Vector2d p = project(cam, Eigen::Vector3d(0, 0, 1));
  CHECK(p.x() == doctest::Approx(320));
  CHECK(p.y() == doctest::Approx(320));
}

TEST_CASE("pinhole projection follows u = fx X / Z + cx") {
  const CameraModel cam = CameraModel::pinhole(400, 400, 320, 320, 640, 640);
  const Eigen::Vector2d p = project(cam, Eigen::Vector3d(0.1, 0, 1));
  CHECK(p.x() == doctest::Approx(360));
  CHECK(p.y() == doctest::Approx(320));
}

TEST_CASE("pinhole projection rejects points behind the camera") {
  const CameraModel cam = CameraModel::pinhole(400, 400, 320, 320, 640, 640);
  CHECK_THROWS_AS(project(cam, Eigen::Vector3d(0, 0, -1)), BehindCameraError);
  CHECK_THROWS_AS(project(cam, Eigen::Vector3d(1, 0, 0)), BehindCameraError);
}

TEST_CASE("fisheye projection at 60 degrees matches a root-found polynomial inverse") {
  const std::vector<double> k{0.05, -0.01, 0.002, -0.0003};
  const CameraModel cam =
      CameraModel::fisheye(300, 310, 320, 240, 640, 480, k);
  const double theta = 60.0 * kPi / 180.0;
  const double phi = 0.7;
  const Eigen::Vector3d point(std::sin(theta) * std::cos(phi),
                              std::sin(theta) * std::sin(phi), std::cos(theta));
  const Eigen::Vector2d px = project(cam, 2.5 * point);
  const double mx = (px.x() - cam.cx) / cam.fx;
  const double my = (px.y() - cam.cy) / cam.fy;
  const double theta_d = std::hypot(mx, my);
  CHECK(invert_equidistant(theta_d, k) == doctest::Approx(theta).epsilon(1e-10));
  CHECK(std::atan2(my, mx) == doctest::Approx(phi).epsilon(1e-10));
}

TEST_CASE("fisheye unprojection round-trips") {
  const CameraModel cam = CameraModel::fisheye(
      300, 300, 320, 240, 640, 480, {0.05, -0.01, 0.002, -0.0003});
  const Eigen::Vector3d dir = Eigen::Vector3d(0.8, -0.4, 0.6).normalized();
  const Eigen::Vector3d ray = unproject(cam, project(cam, dir));
  CHECK((ray - dir).norm() < 1e-9);
}

TEST_CASE("unprojection of simple pinhole pixels") {
  const CameraModel cam = CameraModel::pinhole(400, 400, 320, 320, 640, 640);
  CHECK((unproject(cam, {320, 320}) - Eigen::Vector3d::UnitZ()).norm() < 1e-12);
  CHECK((unproject(cam, {360, 320}) - Eigen::Vector3d(0.1, 0, 1).normalized())
            .norm() < 1e-12);
}

TEST_CASE("distorted pinhole unprojection is verified by forward projection") {
  const CameraModel cam = CameraModel::pinhole(
      500, 505, 320, 240, 640, 480, {-0.28, 0.07, 0.001, -0.0005, 0.01});
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> ux(20, 620), uy(20, 460);
  for (int i = 0; i < 200; ++i) {
    const Eigen::Vector2d px(ux(rng), uy(rng));
    const Eigen::Vector3d ray = unproject(cam, px);
    CHECK(ray.norm() == doctest::Approx(1.0));
    CHECK((project(cam, ray) - px).norm() < 1e-6);
  }
}

TEST_CASE("projection Jacobian matches central differences") {
  const CameraModel cams[] = {
      CameraModel::pinhole(500, 505, 320, 240, 640, 480,
                           {-0.2, 0.05, 0.001, -0.0005, 0.01}),
      CameraModel::fisheye(300, 300, 320, 240, 640, 480,
                           {0.05, -0.01, 0.002, -0.0003})};
  const Eigen::Vector3d x(0.3, -0.2, 1.7);
  for (const CameraModel& cam : cams) {
    Eigen::Matrix<double, 2, 3> j;
    project(cam, x, &j);
    for (int c = 0; c < 3; ++c) {
      Eigen::Vector3d h = Eigen::Vector3d::Zero();
      h(c) = 1e-6;
      const Eigen::Vector2d num =
          (project(cam, x + h) - project(cam, x - h)) / 2e-6;
      CHECK((num - j.col(c)).norm() < 1e-5 * (1 + num.norm()));
    }
  }
}

TEST_CASE("zero twist is the identity pose") {
  const Pose p = se3_exp(Vector6d::Zero());
  CHECK(p.rotation().isIdentity(1e-15));
  CHECK(p.translation().isZero(1e-15));
}

TEST_CASE("twist about z by pi/2 is a quarter turn") {
  Vector6d xi = Vector6d::Zero();
  xi(5) = kPi / 2;
  const Pose p = se3_exp(xi);
  Eigen::Matrix3d expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((p.rotation() - expected).norm() < 1e-12);
}

TEST_CASE("se3 exp and log round-trip on random twists") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int i = 0; i < 500; ++i) {
    Vector6d xi;
    for (int k = 0; k < 6; ++k) xi(k) = u(rng);
    if (xi.tail<3>().norm() > 3.0) continue;
    CHECK((se3_log(se3_exp(xi)) - xi).norm() < 1e-9);
  }
}

TEST_CASE("pose composition and inverse") {
  Vector6d a, b;
  a << 0.1, -0.2, 0.3, 0.2, 0.1, -0.3;
  b << -0.4, 0.5, 0.1, -0.1, 0.3, 0.2;
  const Pose pa = se3_exp(a), pb = se3_exp(b);
  const Eigen::Vector3d x(1, 2, 3);
  CHECK(((pa * pb) * x - pa * (pb * x)).norm() < 1e-12);
  CHECK(((pa * pa.inverse()) * x - x).norm() < 1e-12);
  CHECK(rotation_angle(so3_exp(Eigen::Vector3d(0, 0.3, 0))) ==
        doctest::Approx(0.3));
}

TEST_CASE("camera validation") {
  CHECK_THROWS_AS(CameraModel::pinhole(-1, 1, 0, 0, 10, 10).validate(),
                  GeometryError);
  CHECK_THROWS_AS(CameraModel::pinhole(1, 1, 50, 5, 10, 10).validate(),
                  GeometryError);
  CHECK_NOTHROW(CameraModel::pinhole(1, 1, 5, 5, 10, 10).validate());
}

TEST_CASE("calibration text round-trips") {
  const CameraModel cam = CameraModel::fisheye(
      300.5, 301.25, 320, 240, 640, 480, {0.05, -0.01, 0.002, -0.0003});
  std::stringstream text;
  write_calibration(text, cam);
  const CameraModel back = parse_calibration(text);
  CHECK(back.kind == CameraKind::kFisheye);
  CHECK(back.fx == cam.fx);
  CHECK(back.fy == cam.fy);
  CHECK(back.distortion == cam.distortion);
  CHECK(back.width == 640);
}

TEST_CASE("calibration parsing reports malformed input") {
  std::stringstream bad("model = pinhole\nfx = abc\n");
  CHECK_THROWS(parse_calibration(bad));
}
