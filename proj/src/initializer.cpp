#include "deftrack/initializer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include <Eigen/SVD>

#include "deftrack/io.hpp"

namespace deftrack {

namespace {

// Signed depths along (R ray0) and ray_t of the two-ray intersection, from
// t = depth_t * ray_t - depth_0 * R ray0. False for parallel rays.
bool signed_depths(const Eigen::Vector3d& rotated0, const Eigen::Vector3d& ray_t,
                   const Eigen::Vector3d& t, double& depth0, double& depth_t) {
  const Eigen::Vector3d n = rotated0.cross(ray_t);
  const double n2 = n.squaredNorm();
  if (n2 < 1e-24) return false;
  depth0 = ray_t.cross(t).dot(n) / n2;
  depth_t = rotated0.cross(t).dot(n) / n2;
  return true;
}

int count_in_front(const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
                   std::span<const RayCorrespondence> corr, bool inliers_only) {
  int count = 0;
  for (const RayCorrespondence& c : corr) {
    if (inliers_only && !c.inlier) continue;
    double d0 = 0.0, dt = 0.0;
    if (signed_depths(r * c.ray0, c.ray_t, t, d0, dt) && d0 > 0.0 && dt > 0.0) {
      ++count;
    }
  }
  return count;
}

std::vector<int> collect_inliers(const Eigen::Matrix3d& e,
                                 std::span<const RayCorrespondence> corr,
                                 double threshold, double* mean_residual) {
  std::vector<int> inliers;
  double sum = 0.0;
  for (int i = 0; i < static_cast<int>(corr.size()); ++i) {
    const double r = epipolar_residual(e, corr[i].ray0, corr[i].ray_t);
    if (r < threshold) {
      inliers.push_back(i);
      sum += r;
    }
  }
  if (mean_residual != nullptr) {
    *mean_residual = inliers.empty() ? 0.0 : sum / inliers.size();
  }
  return inliers;
}

// Signed counterpart of epipolar_residual.
double signed_epipolar(const Eigen::Matrix3d& e, const Eigen::Vector3d& ray0,
                       const Eigen::Vector3d& ray_t) {
  const Eigen::Vector3d line_t = e * ray0;
  const Eigen::Vector3d line_0 = e.transpose() * ray_t;
  const double n_t = std::max(line_t.norm(), 1e-300);
  const double n_0 = std::max(line_0.norm(), 1e-300);
  return 0.5 * ray_t.dot(line_t) * (1.0 / n_t + 1.0 / n_0);
}

// Rotation increment on the left, translation moved along the tangent plane
// of the unit sphere and renormalised.
Pose perturb(const Pose& pose, const Eigen::Matrix<double, 5, 1>& delta,
             const Eigen::Matrix<double, 3, 2>& basis) {
  const Eigen::Vector3d t =
      (pose.translation() + basis * delta.tail<2>()).normalized();
  return Pose(Eigen::Matrix3d(so3_exp(delta.head<3>()) * pose.rotation()), t);
}

Eigen::Matrix<double, 3, 2> sphere_basis(const Eigen::Vector3d& t) {
  const Eigen::Vector3d n = t.normalized();
  const Eigen::Vector3d a =
      std::abs(n.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
  Eigen::Matrix<double, 3, 2> b;
  b.col(0) = n.cross(a).normalized();
  b.col(1) = n.cross(b.col(0));
  return b;
}

}  // namespace

Pose refine_relative_pose(std::span<const RayCorrespondence> corr,
                          std::span<const int> inliers, const Pose& initial,
                          double huber_threshold, int iterations) {
  using Vec5 = Eigen::Matrix<double, 5, 1>;
  const double k = huber_threshold;
  auto residuals = [&](const Pose& pose) {
    const Eigen::Matrix3d e = skew(pose.translation()) * pose.rotation();
    Eigen::VectorXd r(inliers.size());
    for (std::size_t i = 0; i < inliers.size(); ++i) {
      const RayCorrespondence& c = corr[inliers[i]];
      r(i) = signed_epipolar(e, c.ray0, c.ray_t);
    }
    return r;
  };
  auto cost = [&](const Eigen::VectorXd& r) {
    double sum = 0.0;
    for (double v : r) {
      const double a = std::abs(v);
      sum += a <= k ? a * a : 2.0 * k * a - k * k;
    }
    return sum;
  };
  Pose pose(initial.rotation(), initial.translation().normalized());
  Eigen::VectorXd r = residuals(pose);
  double current = cost(r);
  double damping = 1e-4;
  constexpr double kStep = 1e-7;
  for (int it = 0; it < iterations; ++it) {
    const Eigen::Matrix<double, 3, 2> basis = sphere_basis(pose.translation());
    Eigen::MatrixXd jac(r.size(), 5);
    for (int j = 0; j < 5; ++j) {
      Vec5 d = Vec5::Zero();
      d(j) = kStep;
      jac.col(j) = (residuals(perturb(pose, d, basis)) -
                    residuals(perturb(pose, -d, basis))) /
                   (2.0 * kStep);
    }
    Eigen::VectorXd w(r.size());
    for (int i = 0; i < r.size(); ++i) {
      const double a = std::abs(r(i));
      w(i) = a <= k ? 1.0 : k / a;
    }
    const Eigen::Matrix<double, 5, 5> h = jac.transpose() * w.asDiagonal() * jac;
    const Vec5 g = jac.transpose() * w.cwiseProduct(r);
    bool accepted = false;
    while (damping < 1e8) {
      Eigen::Matrix<double, 5, 5> a = h;
      a.diagonal() += damping * h.diagonal().cwiseMax(1e-12);
      const Vec5 step = a.ldlt().solve(-g);
      const Pose candidate = perturb(pose, step, basis);
      const Eigen::VectorXd rc = residuals(candidate);
      const double c = cost(rc);
      if (c < current) {
        const double gain = (current - c) / current;
        pose = candidate;
        r = rc;
        current = c;
        damping = std::max(damping * 0.5, 1e-12);
        accepted = true;
        if (gain < 1e-10) return pose;
        break;
      }
      damping *= 10.0;
    }
    if (!accepted) break;
  }
  return pose;
}

double epipolar_residual(const Eigen::Matrix3d& essential,
                         const Eigen::Vector3d& ray0,
                         const Eigen::Vector3d& ray_t) {
  const Eigen::Vector3d line_t = essential * ray0;
  const Eigen::Vector3d line_0 = essential.transpose() * ray_t;
  const double n_t = line_t.norm();
  const double n_0 = line_0.norm();
  if (n_t < 1e-300 || n_0 < 1e-300) return 1.0;
  const double algebraic = std::abs(ray_t.dot(line_t));
  return 0.5 * (algebraic / n_t + algebraic / n_0);
}

Eigen::Matrix3d project_to_essential(const Eigen::Matrix3d& e) {
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      e, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const double s = 0.5 * (svd.singularValues()(0) + svd.singularValues()(1));
  return svd.matrixU() * Eigen::Vector3d(s, s, 0.0).asDiagonal() *
         svd.matrixV().transpose();
}

Eigen::Matrix3d essential_from_rays(std::span<const RayCorrespondence> corr,
                                    std::span<const int> indices) {
  if (indices.size() < 8) {
    throw InitializationError("eight-point solve needs at least 8 rays");
  }
  Eigen::MatrixXd a(static_cast<Eigen::Index>(std::max<std::size_t>(indices.size(), 9)), 9);
  a.setZero();
  for (std::size_t row = 0; row < indices.size(); ++row) {
    const RayCorrespondence& c = corr[indices[row]];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        a(static_cast<Eigen::Index>(row), 3 * i + j) = c.ray_t(i) * c.ray0(j);
      }
    }
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::Matrix<double, 9, 1> e = svd.matrixV().col(8);
  Eigen::Matrix3d essential;
  essential << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  return project_to_essential(essential);
}

EssentialResult estimate_essential_ransac(std::span<RayCorrespondence> corr,
                                          const RansacOptions& options) {
  const int n = static_cast<int>(corr.size());
  if (n < 8) {
    std::ostringstream msg;
    msg << "essential estimation needs 8 correspondences, got " << n;
    throw InitializationError(msg.str());
  }
  std::mt19937_64 rng(options.seed);
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  std::vector<int> sample(8);

  std::vector<int> best_inliers;
  Eigen::Matrix3d best_essential = Eigen::Matrix3d::Zero();
  const int early_exit =
      static_cast<int>(std::ceil(options.early_exit_ratio * n));
  for (int it = 0; it < options.iterations; ++it) {
    // Partial Fisher-Yates draw of 8 distinct indices.
    for (int k = 0; k < 8; ++k) {
      std::uniform_int_distribution<int> pick(k, n - 1);
      std::swap(pool[k], pool[pick(rng)]);
      sample[k] = pool[k];
    }
    const Eigen::Matrix3d e = essential_from_rays(corr, sample);
    std::vector<int> inliers =
        collect_inliers(e, corr, options.inlier_threshold, nullptr);
    if (inliers.size() > best_inliers.size()) {
      best_inliers = std::move(inliers);
      best_essential = e;
      if (static_cast<int>(best_inliers.size()) >= early_exit) break;
    }
  }
  if (best_inliers.size() < 8) {
    throw InitializationError("RANSAC found fewer than 8 inliers");
  }
  EssentialResult result;
  result.essential = best_essential;
  collect_inliers(best_essential, corr, options.inlier_threshold,
                  &result.mean_residual);
  // Refits on the consensus set; one that loses support is discarded.
  for (int refit = 0; refit < 2; ++refit) {
    const Eigen::Matrix3d e = essential_from_rays(corr, best_inliers);
    double mean_residual = 0.0;
    std::vector<int> inliers =
        collect_inliers(e, corr, options.inlier_threshold, &mean_residual);
    if (inliers.size() < best_inliers.size()) break;
    result.essential = e;
    result.mean_residual = mean_residual;
    best_inliers = std::move(inliers);
  }
  // Local optimisation: the linear fit weighs rays unevenly, so polish the
  // motion it implies and let the consensus set grow with it.
  for (int round = 0; round < 2 && options.refine_iterations > 0; ++round) {
    for (auto& c : corr) c.inlier = false;
    for (int i : best_inliers) corr[i].inlier = true;
    Pose pose;
    try {
      pose = decompose_essential(result.essential, corr);
    } catch (const InitializationError&) {
      break;
    }
    pose = refine_relative_pose(corr, best_inliers, pose,
                                options.inlier_threshold,
                                options.refine_iterations);
    const Eigen::Matrix3d e = skew(pose.translation()) * pose.rotation();
    double mean_residual = 0.0;
    std::vector<int> inliers =
        collect_inliers(e, corr, options.inlier_threshold, &mean_residual);
    if (inliers.size() < best_inliers.size()) break;
    result.essential = e;
    result.mean_residual = mean_residual;
    best_inliers = std::move(inliers);
  }
  result.inliers = best_inliers;
  for (auto& c : corr) c.inlier = false;
  for (int i : result.inliers) corr[i].inlier = true;
  return result;
}

Pose decompose_essential(const Eigen::Matrix3d& essential,
                         std::span<const RayCorrespondence> corr,
                         double tie_angle) {
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      essential, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) / sv(0) < 1e-6) {
    throw InitializationError("essential matrix has rank < 2");
  }
  Eigen::Matrix3d u = svd.matrixU();
  Eigen::Matrix3d v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Eigen::Matrix3d w;
  w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d r1 = u * w * v.transpose();
  const Eigen::Matrix3d r2 = u * w.transpose() * v.transpose();
  const Eigen::Vector3d t = u.col(2).normalized();

  const bool inliers_only = std::any_of(
      corr.begin(), corr.end(), [](const RayCorrespondence& c) { return c.inlier; });

  struct Hypothesis {
    Eigen::Matrix3d r;
    Eigen::Vector3d t;
    int votes;
  };
  std::vector<Hypothesis> hyps;
  const double a1 = rotation_angle(r1);
  const double a2 = rotation_angle(r2);
  if (std::abs(a1 - a2) > tie_angle) {
    const Eigen::Matrix3d& r = a1 < a2 ? r1 : r2;
    hyps.push_back({r, t, 0});
    hyps.push_back({r, -t, 0});
  } else {
    hyps.push_back({r1, t, 0});
    hyps.push_back({r1, -t, 0});
    hyps.push_back({r2, t, 0});
    hyps.push_back({r2, -t, 0});
  }
  for (auto& h : hyps) h.votes = count_in_front(h.r, h.t, corr, inliers_only);
  std::stable_sort(hyps.begin(), hyps.end(),
                   [](const Hypothesis& a, const Hypothesis& b) {
                     return a.votes > b.votes;
                   });
  if (hyps[0].votes == 0 || hyps[0].votes == hyps[1].votes) {
    std::ostringstream msg;
    msg << "cheirality tie between motion hypotheses (" << hyps[0].votes
        << " vs " << hyps[1].votes << " points in front)";
    throw InitializationError(msg.str());
  }

  // With no translation every ray pair is parallel after rotation.
  std::vector<double> parallax;
  for (const RayCorrespondence& c : corr) {
    if (inliers_only && !c.inlier) continue;
    parallax.push_back(parallax_angle(c.ray0, c.ray_t, hyps[0].r));
  }
  std::nth_element(parallax.begin(), parallax.begin() + parallax.size() / 2,
                   parallax.end());
  if (parallax[parallax.size() / 2] < 1e-6) {
    throw InitializationError("near-zero translation: pure rotation");
  }
  return Pose(orthonormalize(hyps[0].r), hyps[0].t);
}

double parallax_angle(const Eigen::Vector3d& ray0, const Eigen::Vector3d& ray_t,
                      const Eigen::Matrix3d& rotation) {
  const Eigen::Vector3d a = rotation * ray0;
  return std::atan2(a.cross(ray_t).norm(), a.dot(ray_t));
}

std::optional<Eigen::Vector3d> triangulate_idwm(
    const Eigen::Vector3d& ray0, const Eigen::Vector3d& ray_t,
    const Pose& relative, const TriangulationOptions& options) {
  const Eigen::Matrix3d& r = relative.rotation();
  const Eigen::Vector3d& t = relative.translation();
  if (parallax_angle(ray0, ray_t, r) < options.min_parallax) return std::nullopt;
  const Eigen::Vector3d a = (r * ray0).normalized();
  const Eigen::Vector3d b = ray_t.normalized();
  double s0 = 0.0, st = 0.0;
  if (!signed_depths(a, b, t, s0, st) || s0 <= 0.0 || st <= 0.0) {
    return std::nullopt;
  }
  // Sine-rule depths of the triangle (baseline, ray 0, ray t).
  const double cross = a.cross(b).norm();
  const double depth0 = b.cross(t).norm() / cross;
  const double depth_t = a.cross(t).norm() / cross;
  const Eigen::Vector3d end0 = t + depth0 * a;  // frame t coordinates
  const Eigen::Vector3d end_t = depth_t * b;
  const Eigen::Vector3d point_t =
      (depth_t * end0 + depth0 * end_t) / (depth0 + depth_t);
  const Eigen::Vector3d point0 = r.transpose() * (point_t - t);
  if (point0.dot(ray0) <= 0.0 || point_t.dot(ray_t) <= 0.0) return std::nullopt;
  return point0;
}

std::optional<Eigen::Vector3d> triangulate_midpoint(
    const Eigen::Vector3d& ray0, const Eigen::Vector3d& ray_t,
    const Pose& relative) {
  const Eigen::Vector3d a = relative.rotation() * ray0;
  const Eigen::Vector3d& b = ray_t;
  const Eigen::Vector3d& t = relative.translation();
  // min |t + l0 a - lt b|^2
  Eigen::Matrix2d m;
  m << a.dot(a), -a.dot(b), -a.dot(b), b.dot(b);
  const Eigen::Vector2d rhs(-a.dot(t), b.dot(t));
  if (std::abs(m.determinant()) < 1e-18) return std::nullopt;
  const Eigen::Vector2d l = m.inverse() * rhs;
  const Eigen::Vector3d mid = 0.5 * ((t + l(0) * a) + l(1) * b);
  return relative.rotation().transpose() * (mid - t);
}

InitialMap initialize_map(std::span<const PixelMatch> matches,
                          const CameraModel& camera,
                          const InitializerOptions& options) {
  std::vector<RayCorrespondence> corr;
  corr.reserve(matches.size());
  for (const PixelMatch& m : matches) {
    corr.push_back({m.id, unproject(camera, m.pixel0),
                    unproject(camera, m.pixel_t), false});
  }
  RansacOptions ransac = options.ransac;
  if (options.inlier_threshold_px > 0.0) {
    ransac.inlier_threshold =
        options.inlier_threshold_px / (0.5 * (camera.fx + camera.fy));
  }
  InitialMap map;
  map.essential = estimate_essential_ransac(corr, ransac);
  map.relative_pose = decompose_essential(map.essential.essential, corr);
  map.essential.relative_pose = map.relative_pose;
  for (std::size_t i = 0; i < corr.size(); ++i) {
    if (!corr[i].inlier) continue;
    const auto point = triangulate_idwm(corr[i].ray0, corr[i].ray_t,
                                        map.relative_pose,
                                        options.triangulation);
    if (point) map.points.push_back({corr[i].id, *point, matches[i].pixel0});
  }
  if (static_cast<int>(map.points.size()) < options.min_points) {
    std::ostringstream msg;
    msg << "only " << map.points.size()
        << " points triangulated with sufficient parallax";
    throw InitializationError(msg.str());
  }
  return map;
}

void write_pose_row(std::ostream& out, int frame, const Pose& pose) {
  const Eigen::Quaterniond q = pose.quaternion();
  const Eigen::Vector3d& t = pose.translation();
  precise(out);
  out << frame << ',' << t.x() << ',' << t.y() << ',' << t.z() << ',' << q.x()
      << ',' << q.y() << ',' << q.z() << ',' << q.w() << '\n';
}

}  // namespace deftrack
