#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "deftrack/geometry.hpp"

namespace deftrack {

/// Two-view initialisation could not produce a map; callers retry with a
/// later frame.
class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RayCorrespondence {
  int id = 0;
  Eigen::Vector3d ray0 = Eigen::Vector3d::UnitZ();  // unit ray in frame 0
  Eigen::Vector3d ray_t = Eigen::Vector3d::UnitZ();  // unit ray in frame t
  bool inlier = false;
};

struct EssentialResult {
  Eigen::Matrix3d essential = Eigen::Matrix3d::Zero();
  /// T_{C^t C^0}: x_t = R x_0 + t, with |t| = 1.
  Pose relative_pose;
  std::vector<int> inliers;  // indices into the correspondence list
  double mean_residual = 0.0;
};

struct RansacOptions {
  int iterations = 200;
  /// Angular threshold in radians on the symmetric epipolar residual.
  double inlier_threshold = 1.0 / 400.0;
  double early_exit_ratio = 0.7;
  /// Iterations of refine_relative_pose per local-optimisation round on the
  /// consensus set; 0 keeps the linear estimate.
  int refine_iterations = 20;
  std::uint64_t seed = 42;
};

/// Angle-like epipolar residual: mean of the sines of the angles between each
/// ray and the epipolar plane induced by the other.
double epipolar_residual(const Eigen::Matrix3d& essential,
                         const Eigen::Vector3d& ray0,
                         const Eigen::Vector3d& ray_t);

/// Linear eight-point solve on unit rays (n >= 8), projected onto the
/// essential manifold.
Eigen::Matrix3d essential_from_rays(std::span<const RayCorrespondence> corr,
                                    std::span<const int> indices);

/// Replaces the singular values with (s, s, 0), s the mean of the first two.
Eigen::Matrix3d project_to_essential(const Eigen::Matrix3d& e);

/// RANSAC over eight-point hypotheses, linear refits on the consensus set and
/// a nonlinear polish of the implied motion. Sets `inlier` on the
/// correspondences.
/// Throws InitializationError with fewer than 8 inputs or inliers.
EssentialResult estimate_essential_ransac(std::span<RayCorrespondence> corr,
                                          const RansacOptions& options = {});

/// Picks the smaller of the two candidate rotations (falling back to a full
/// four-way cheirality vote when both angles are within `tie_angle` rad of
/// each other) and the translation sign with the most points in front of both
/// cameras. Translation has unit norm. Throws InitializationError on a
/// cheirality tie or degenerate (rank < 2) input.
Pose decompose_essential(const Eigen::Matrix3d& essential,
                         std::span<const RayCorrespondence> corr,
                         double tie_angle = 1e-3);

/// Levenberg-Marquardt polish of (R, t) on the inlier set, minimising the
/// Huber-weighted signed epipolar residual. Rotation increments are applied
/// on the left; the translation stays on the unit sphere. Returns the input
/// unchanged when no step lowers the cost.
Pose refine_relative_pose(std::span<const RayCorrespondence> corr,
                          std::span<const int> inliers, const Pose& initial,
                          double huber_threshold, int iterations = 20);

struct TriangulationOptions {
  double min_parallax = 0.5 * 3.14159265358979323846 / 180.0;
};

/// Inverse-depth-weighted midpoint. Returns the point in frame 0, or nothing
/// if the parallax is below the threshold or the point is behind either
/// camera. `relative` maps frame 0 into frame t.
std::optional<Eigen::Vector3d> triangulate_idwm(
    const Eigen::Vector3d& ray0, const Eigen::Vector3d& ray_t,
    const Pose& relative, const TriangulationOptions& options = {});

/// Classical midpoint of the common perpendicular, frame 0. No checks.
std::optional<Eigen::Vector3d> triangulate_midpoint(
    const Eigen::Vector3d& ray0, const Eigen::Vector3d& ray_t,
    const Pose& relative);

/// Angle between the two rays once ray0 is rotated into frame t.
double parallax_angle(const Eigen::Vector3d& ray0, const Eigen::Vector3d& ray_t,
                      const Eigen::Matrix3d& rotation);

struct PixelMatch {
  int id = 0;
  Eigen::Vector2d pixel0;
  Eigen::Vector2d pixel_t;
};

struct InitialPoint {
  int id = 0;
  Eigen::Vector3d position;  // world = camera-0 frame
  Eigen::Vector2d pixel0;
};

struct InitialMap {
  std::vector<InitialPoint> points;
  Pose relative_pose;  // T_{C^t C^0}, unit translation
  EssentialResult essential;
};

struct InitializerOptions {
  RansacOptions ransac;
  /// When positive, replaces ransac.inlier_threshold by this many pixels
  /// divided by the mean focal length.
  double inlier_threshold_px = 1.0;
  TriangulationOptions triangulation;
  int min_points = 8;
};

/// Unprojects, estimates the essential matrix, recovers the motion and
/// triangulates every inlier.
InitialMap initialize_map(std::span<const PixelMatch> matches,
                          const CameraModel& camera,
                          const InitializerOptions& options = {});

/// `frame,tx,ty,tz,qx,qy,qz,qw` row (no header).
void write_pose_row(std::ostream& out, int frame, const Pose& pose);

}  // namespace deftrack
