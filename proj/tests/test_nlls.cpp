#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "deftrack/deform_tracking.hpp"
#include "deftrack/nlls.hpp"

using namespace deftrack;
using nlls::Matrix;
using nlls::Vector;

namespace {

// r = A x - b on one block.
class LinearCost final : public nlls::CostFunction {
 public:
  LinearCost(Matrix a, Vector b) : a_(std::move(a)), b_(std::move(b)) {}
  int residual_size() const override { return static_cast<int>(b_.size()); }
  bool evaluate(std::span<const Vector* const> p, Vector& r,
                std::span<Matrix*> j) const override {
    r = a_ * *p[0] - b_;
    if (!j.empty() && j[0]) *j[0] = a_;
    return true;
  }

 private:
  Matrix a_;
  Vector b_;
};

// Rosenbrock as least squares: r = (10 (y - x^2), 1 - x).
class RosenbrockCost final : public nlls::CostFunction {
 public:
  int residual_size() const override { return 2; }
  bool evaluate(std::span<const Vector* const> p, Vector& r,
                std::span<Matrix*> j) const override {
    const double x = (*p[0])(0), y = (*p[0])(1);
    r.resize(2);
    r << 10.0 * (y - x * x), 1.0 - x;
    if (!j.empty() && j[0]) {
      j[0]->resize(2, 2);
      *j[0] << -20.0 * x, 10.0, -1.0, 0.0;
    }
    return true;
  }
};

// Regularised lower incomplete gamma ratio for half-integer shapes, i.e. the
// chi-square CDF, via its series expansion.
double chi_square_cdf(double x, int dof) {
  const double a = 0.5 * dof, z = 0.5 * x;
  double term = 1.0 / a, sum = term;
  for (int n = 1; n < 500; ++n) {
    term *= z / (a + n);
    sum += term;
  }
  return std::exp(-z + a * std::log(z) - std::lgamma(a)) * sum;
}

}  // namespace

TEST_CASE("chi-square thresholds are the 95th percentiles") {
  CHECK(chi_square_cdf(nlls::kChi2_95_2Dof, 2) == doctest::Approx(0.95).epsilon(1e-4));
  CHECK(chi_square_cdf(nlls::kChi2_95_3Dof, 3) == doctest::Approx(0.95).epsilon(1e-4));
  // Closed forms cross-check the series.
  CHECK(chi_square_cdf(3.0, 2) == doctest::Approx(1.0 - std::exp(-1.5)));
  CHECK(chi_square_cdf(3.0, 3) ==
        doctest::Approx(std::erf(std::sqrt(1.5)) -
                        std::sqrt(6.0 / std::numbers::pi) * std::exp(-1.5)));
}

TEST_CASE("Huber is quadratic below the threshold") {
  Vector r(2);
  r << 1.0, 0.0;
  const nlls::RobustCost c = nlls::huber_apply(r, Vector::Ones(2), nlls::kChi2_95_2Dof);
  CHECK(c.squared_norm == doctest::Approx(1.0));
  CHECK(c.cost == doctest::Approx(1.0));
  CHECK(c.weight == 1.0);
}

TEST_CASE("Huber branches meet at the threshold") {
  const double t = nlls::kChi2_95_3Dof;
  Vector r(3);
  r << std::sqrt(t), 0.0, 0.0;
  const nlls::RobustCost c = nlls::huber_apply(r, Vector::Ones(3), t);
  CHECK(c.cost == doctest::Approx(t));
  CHECK(c.cost == doctest::Approx(2.0 * std::sqrt(t * t) - t));
  CHECK(c.weight == doctest::Approx(1.0));
  // Above the threshold the cost grows linearly in the residual norm.
  r(0) = 2.0 * std::sqrt(t);
  const nlls::RobustCost far = nlls::huber_apply(r, Vector::Ones(3), t);
  CHECK(far.cost == doctest::Approx(2.0 * std::sqrt(t * 4.0 * t) - t));
  CHECK(far.weight == doctest::Approx(0.5));
}

TEST_CASE("Huber of a zero residual") {
  const nlls::RobustCost c = nlls::huber_apply(Vector::Zero(3), Vector::Ones(3), 7.815);
  CHECK(c.cost == 0.0);
  CHECK(c.weight == 1.0);
}

TEST_CASE("Huber uses sigma-scaled residuals") {
  Vector r(2), s(2);
  r << 2.0, 3.0;
  s << 2.0, 3.0;
  CHECK(nlls::huber_apply(r, s, 5.991).squared_norm == doctest::Approx(2.0));
}

TEST_CASE("linear least squares converges to the closed form") {
  std::mt19937 rng(1);
  std::normal_distribution<double> g;
  Matrix a(10, 3);
  Vector b(10);
  for (int i = 0; i < 10; ++i) {
    for (int k = 0; k < 3; ++k) a(i, k) = g(rng);
    b(i) = g(rng);
  }
  nlls::Problem problem;
  const int x = problem.add_parameter_block(Vector::Zero(3));
  problem.add_residual_block(std::make_shared<LinearCost>(a, b), {x}, Vector::Ones(10));
  nlls::SolverOptions opts;
  opts.initial_damping = 1e-12;
  const nlls::SolverSummary summary = nlls::solve(problem, opts);
  const Vector expected = (a.transpose() * a).ldlt().solve(a.transpose() * b);
  CHECK((problem.value(x) - expected).norm() < 1e-10);
  int accepted = 0;
  for (const auto& rec : summary.history) accepted += rec.accepted;
  CHECK(accepted <= 2);
}

TEST_CASE("Rosenbrock reaches its global minimum") {
  nlls::Problem problem;
  Vector start(2);
  start << -1.2, 1.0;
  const int x = problem.add_parameter_block(start);
  problem.add_residual_block(std::make_shared<RosenbrockCost>(), {x}, Vector::Ones(2));
  nlls::SolverOptions opts;
  opts.max_iterations = 200;
  const nlls::SolverSummary summary = nlls::solve(problem, opts);
  CHECK(summary.status != nlls::SolverStatus::kFailed);
  CHECK(problem.value(x)(0) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(problem.value(x)(1) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(summary.final_cost < 1e-12);
}

TEST_CASE("zero-residual problem returns immediately") {
  nlls::Problem problem;
  Vector b(2);
  b << 1.0, 2.0;
  const int fixed = problem.add_parameter_block(Vector::Constant(2, 5.0));
  problem.set_fixed(fixed);
  const int x = problem.add_parameter_block(b);
  problem.add_residual_block(std::make_shared<LinearCost>(Matrix::Identity(2, 2), b), {x},
                             Vector::Ones(2));
  const nlls::SolverSummary summary = nlls::solve(problem);
  CHECK(summary.final_cost == 0.0);
  CHECK(summary.iterations <= 1);
  CHECK(problem.value(fixed) == Vector::Constant(2, 5.0));
}

TEST_CASE("residual blocks validate their inputs") {
  nlls::Problem problem;
  const int x = problem.add_parameter_block(Vector::Zero(2));
  auto cost = std::make_shared<LinearCost>(Matrix::Identity(2, 2), Vector::Zero(2));
  CHECK_THROWS_AS(problem.add_residual_block(cost, {x}, Vector::Ones(3)), std::invalid_argument);
  CHECK_THROWS_AS(problem.add_residual_block(cost, {x}, Vector::Zero(2)), std::invalid_argument);
  CHECK_THROWS_AS(problem.add_residual_block(cost, {7}, Vector::Ones(2)), std::invalid_argument);
}

TEST_CASE("pose manifold applies twists on the left") {
  Vector6d xi;
  xi << 0.1, -0.2, 0.3, 0.05, 0.02, -0.04;
  const Pose base = se3_exp(Vector6d(Vector6d::Constant(0.3)));
  const nlls::PoseManifold m;
  const Pose moved = nlls::pose_from_vector(m.plus(nlls::pose_to_vector(base), xi));
  const Pose expected = se3_exp(xi) * base;
  CHECK((moved.rotation() - expected.rotation()).norm() < 1e-12);
  CHECK((moved.translation() - expected.translation()).norm() < 1e-12);
}

namespace {

nlls::Problem deform_problem(std::mt19937& rng, const CameraModel& cam) {
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  nlls::Problem problem;
  Vector6d xi;
  for (int k = 0; k < 6; ++k) xi(k) = u(rng);
  const int pose = problem.add_parameter_block(nlls::pose_to_vector(se3_exp(xi)),
                                               std::make_shared<nlls::PoseManifold>());
  const Eigen::Vector3d anchor(u(rng), u(rng), 4.0 + u(rng));
  const Eigen::Vector3d disp(u(rng), u(rng), u(rng));
  Vector d1(3), d2(3);
  d1 << u(rng), u(rng), u(rng);
  d2 << u(rng), u(rng), u(rng);
  const int a = problem.add_parameter_block(d1);
  const int b = problem.add_parameter_block(d2);
  problem.add_residual_block(
      std::make_shared<ReprojectionCost>(cam, Eigen::Vector2d(320, 240), anchor, disp),
      {pose, a}, Vector::Ones(2));
  problem.add_residual_block(std::make_shared<SpatialCost>(0.7), {a, b}, Vector::Ones(3));
  problem.add_residual_block(std::make_shared<TemporalCost>(), {a}, Vector::Ones(3));
  return problem;
}

}  // namespace

TEST_CASE("analytic Jacobians of the tracking residuals match central differences") {
  std::mt19937 rng(9);
  const CameraModel pin = CameraModel::pinhole(500, 500, 320, 240, 640, 480,
                                               {-0.1, 0.02, 0.001, 0.0005, 0.0});
  const CameraModel fish = CameraModel::fisheye(300, 300, 320, 240, 640, 480,
                                                {0.05, -0.01, 0.002, -0.0003});
  for (int trial = 0; trial < 20; ++trial) {
    const nlls::Problem problem = deform_problem(rng, trial % 2 ? fish : pin);
    CHECK(nlls::check_jacobians(problem, 1e-6) < 1e-4);
  }
}

TEST_CASE("linear residual Jacobians are exact") {
  nlls::Problem problem;
  Vector a(3), b(3);
  a << 0.1, 0.2, 0.3;
  b << -0.3, 0.5, 0.0;
  const int ia = problem.add_parameter_block(a);
  const int ib = problem.add_parameter_block(b);
  problem.add_residual_block(std::make_shared<SpatialCost>(0.4), {ia, ib}, Vector::Ones(3));
  CHECK(nlls::check_jacobians(problem) < 1e-9);
  nlls::Problem temporal;
  const int it = temporal.add_parameter_block(a);
  temporal.add_residual_block(std::make_shared<TemporalCost>(), {it}, Vector::Ones(3));
  CHECK(nlls::check_jacobians(temporal) < 1e-9);
}
