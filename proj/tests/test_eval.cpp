#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "deftrack/eval.hpp"
#include "deftrack/initializer.hpp"
#include "deftrack/io.hpp"

using namespace deftrack;
using namespace deftrack::eval;

namespace {

double cost(double s, const std::vector<Eigen::Vector3d>& e,
            const std::vector<Eigen::Vector3d>& g) {
  double sum = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) sum += (s * e[i] - g[i]).squaredNorm();
  return sum;
}

// Derivative-free minimiser of the scale cost over [lo, hi].
double golden_section_scale(const std::vector<Eigen::Vector3d>& e,
                            const std::vector<Eigen::Vector3d>& g, double lo,
                            double hi) {
  const double r = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - r * (b - a), d = a + r * (b - a);
  while (b - a > 1e-10) {
    if (cost(c, e, g) < cost(d, e, g)) {
      b = d;
    } else {
      a = c;
    }
    c = b - r * (b - a);
    d = a + r * (b - a);
  }
  return 0.5 * (a + b);
}

std::vector<Eigen::Vector3d> random_cloud(std::mt19937& rng, int n) {
  std::normal_distribution<double> g(0.0, 10.0);
  std::vector<Eigen::Vector3d> out;
  for (int i = 0; i < n; ++i) out.emplace_back(g(rng), g(rng), 50.0 + g(rng));
  return out;
}

}  // namespace

TEST_CASE("identical clouds have unit scale and zero error") {
  std::mt19937 rng(1);
  const auto x = random_cloud(rng, 40);
  CHECK(optimal_scale(x, x) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(rmse_frame(x, x, 1.0) == 0.0);
}

TEST_CASE("doubled estimate has scale one half") {
  std::mt19937 rng(2);
  const auto x = random_cloud(rng, 40);
  std::vector<Eigen::Vector3d> big;
  for (const auto& p : x) big.push_back(2.0 * p);
  const double s = optimal_scale(big, x);
  CHECK(s == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(rmse_frame(big, x, s) < 1e-12);
}

TEST_CASE("closed-form scale matches a golden-section search") {
  std::mt19937 rng(3);
  std::normal_distribution<double> noise(0.0, 2.0);
  for (int trial = 0; trial < 10; ++trial) {
    const auto g = random_cloud(rng, 30);
    std::vector<Eigen::Vector3d> e;
    for (const auto& p : g) e.push_back(0.037 * p + Eigen::Vector3d(noise(rng), noise(rng), noise(rng)) * 0.037);
    const double expected = golden_section_scale(e, g, 0.0, 1000.0);
    CHECK(optimal_scale(e, g) == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("RMSE of a 3-4-5 offset") {
  const std::vector<Eigen::Vector3d> e = {{0, 0, 0}, {1, 1, 1}};
  const std::vector<Eigen::Vector3d> g = {{3, 4, 0}, {4, 5, 1}};
  CHECK(rmse_frame(e, g, 1.0) == doctest::Approx(5.0));
}

TEST_CASE("scale and RMSE validate their input") {
  const std::vector<Eigen::Vector3d> empty;
  const std::vector<Eigen::Vector3d> one = {{1, 2, 3}};
  const std::vector<Eigen::Vector3d> two = {{1, 2, 3}, {4, 5, 6}};
  const std::vector<Eigen::Vector3d> zeros = {{0, 0, 0}};
  CHECK_THROWS_AS(optimal_scale(empty, empty), EvalError);
  CHECK_THROWS_AS(optimal_scale(one, two), EvalError);
  CHECK_THROWS_AS(optimal_scale(zeros, one), EvalError);
  CHECK_THROWS_AS(rmse_frame(empty, empty, 1.0), EvalError);
}

TEST_CASE("sequence RMSE pools per-frame aligned errors") {
  std::mt19937 rng(4);
  std::normal_distribution<double> noise(0.0, 0.5);
  std::vector<PointFrame> est, truth;
  double sum = 0.0;
  int n = 0;
  for (int f = 0; f < 6; ++f) {
    PointFrame t{f, {}, {}}, e{f, {}, {}};
    const auto cloud = random_cloud(rng, 25);
    const double k = 0.02 * (f + 1);
    for (int i = 0; i < 25; ++i) {
      t.ids.push_back(i);
      t.points.push_back(cloud[i]);
      // Estimates list ids in reverse and skip one id in odd frames.
      const int j = 24 - i;
      if (f % 2 && j == 7) continue;
      e.ids.push_back(j);
      e.points.push_back(k * (cloud[j] + Eigen::Vector3d(noise(rng), noise(rng), noise(rng))));
    }
    // Brute-force recomputation: match by id, then search the scale.
    std::vector<Eigen::Vector3d> a, b;
    for (std::size_t i = 0; i < e.ids.size(); ++i) {
      a.push_back(e.points[i]);
      b.push_back(t.points[e.ids[i]]);
    }
    const double s = golden_section_scale(a, b, 0.0, 1000.0);
    sum += cost(s, a, b);
    n += static_cast<int>(a.size());
    est.push_back(e);
    truth.push_back(t);
  }
  truth.push_back({99, {0}, {{1, 1, 1}}});  // unmatched frame is ignored
  const EvalReport report = evaluate(est, truth);
  CHECK(report.frames.size() == 6);
  CHECK(report.frames[1].matched == 24);
  CHECK(report.sequence_rmse == doctest::Approx(std::sqrt(sum / n)).epsilon(1e-6));
  CHECK(std::isnan(report.frames[0].median_step));
}

TEST_CASE("evaluation without any match throws") {
  const std::vector<PointFrame> est = {{0, {1}, {{1, 2, 3}}}};
  const std::vector<PointFrame> truth = {{1, {1}, {{1, 2, 3}}}};
  CHECK_THROWS_AS(evaluate(est, truth), EvalError);
}

TEST_CASE("trajectory error is invariant to a similarity") {
  std::map<int, Pose> truth, est;
  const Pose g = se3_exp(Vector6d((Vector6d() << 1, -2, 3, 0.1, 0.2, -0.3).finished()));
  for (int f = 0; f < 10; ++f) {
    Vector6d xi;
    xi << 0.1 * f, std::sin(f), 2.0 * f, 0.01 * f, 0.0, 0.02 * f;
    const Pose p = se3_exp(xi);
    truth[f] = p;
    // Same trajectory in a world moved by g and scaled by 0.1.
    const Pose moved = p * g.inverse();
    est[f] = Pose(moved.rotation(), 0.1 * moved.translation());
  }
  const auto [rmse, scale] = trajectory_error(est, truth);
  CHECK(rmse < 1e-9);
  CHECK(scale == doctest::Approx(10.0));
}

TEST_CASE("trend check passes an ordered table and fails a shuffled one") {
  const std::map<GridCell, double> ordered = {
      {{0, 0}, 1.15},   {{2.5, 2.5}, 1.77}, {{2.5, 5}, 1.70}, {{5, 2.5}, 1.84},
      {{5, 5}, 3.65},   {{10, 2.5}, 2.27},  {{10, 5}, 4.57}};
  const TrendReport ok = trend_report(ordered);
  CHECK(ok.pass);
  for (const Verdict& v : ok.verdicts) CHECK(v.evaluated);
  CHECK(ok.table.find("4.57") != std::string::npos);

  std::map<GridCell, double> shuffled = ordered;
  std::swap(shuffled[{0, 0}], shuffled[{10, 5}]);
  CHECK_FALSE(trend_report(shuffled).pass);

  std::map<GridCell, double> flipped = ordered;
  std::swap(flipped[{5, 2.5}], flipped[{5, 5}]);
  CHECK_FALSE(trend_report(flipped).pass);

  CHECK_THROWS_AS(trend_report({{{0, 0}, 1.0}}), EvalError);
}

TEST_CASE("trend orderings with missing cells are not evaluated") {
  const TrendReport r = trend_report({{{0, 0}, 1.0}, {{2.5, 2.5}, 2.0}});
  bool skipped = false;
  for (const Verdict& v : r.verdicts) skipped |= !v.evaluated;
  CHECK(skipped);
  CHECK(r.pass);
}

TEST_CASE("point and pose tables round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "deftrack_eval_io";
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "points.csv");
    out << "id,frame,x,y,z\n";
    write_point_rows(out, {0, {3, 5}, {{1.5, -2, 3.25}, {0, 0, 1e-7}}});
    write_point_rows(out, {1, {3}, {{4, 5, 6}}});
  }
  const auto frames = read_point_table(dir / "points.csv");
  REQUIRE(frames.size() == 2);
  CHECK(frames[0].ids == std::vector<int>{3, 5});
  CHECK(frames[0].points[0] == Eigen::Vector3d(1.5, -2, 3.25));
  CHECK(frames[0].points[1].z() == 1e-7);
  CHECK(frames[1].frame == 1);

  const Pose p = se3_exp(Vector6d((Vector6d() << 0.3, -0.1, 2, 0.4, -0.2, 0.1).finished()));
  {
    std::ofstream out(dir / "poses.csv");
    out << "frame,tx,ty,tz,qx,qy,qz,qw\n";
    write_pose_row(out, 4, p);
  }
  const auto poses = read_pose_table(dir / "poses.csv");
  REQUIRE(poses.count(4) == 1);
  CHECK((poses.at(4).rotation() - p.rotation()).norm() < 1e-12);
  CHECK((poses.at(4).translation() - p.translation()).norm() < 1e-12);

  {
    std::ofstream out(dir / "bad.csv");
    out << "id,frame,x,y,z\n1,0,2,oops,4\n";
  }
  CHECK_THROWS(read_point_table(dir / "bad.csv"));
  CHECK_THROWS(read_point_table(dir / "missing.csv"));
  std::filesystem::remove_all(dir);
}
