#pragma once

#include <memory>
#include <span>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "deftrack/geometry.hpp"
#include "deftrack/nlls.hpp"

namespace deftrack {

enum class PointStatus { kActive, kLost };

/// A map point whose current position is anchor + (displacement + increment).
/// The anchor is the initial triangulation, the displacement the deformation
/// accumulated up to the previous frame and the increment the deformation
/// being estimated for the current frame.
struct MapPoint {
  int id = 0;
  Eigen::Vector3d anchor = Eigen::Vector3d::Zero();
  Eigen::Vector3d displacement = Eigen::Vector3d::Zero();
  Eigen::Vector3d increment = Eigen::Vector3d::Zero();
  Eigen::Vector2d reference_pixel = Eigen::Vector2d::Zero();
  PointStatus status = PointStatus::kActive;

  bool active() const { return status == PointStatus::kActive; }
  /// Position at the previous frame.
  Eigen::Vector3d previous_position() const { return anchor + displacement; }
  Eigen::Vector3d position() const { return anchor + (displacement + increment); }
};

struct Observation {
  int point_id = 0;
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
};

struct GraphEdge {
  int neighbor = 0;  // index into the map
  double weight = 0.0;
};

/// K-nearest-neighbour graph over active points, indexed like the map.
struct DeformationGraph {
  std::vector<std::vector<GraphEdge>> neighbors;
  double sigma = 1.0;
};

/// exp(-d^2 / (2 sigma^2))
inline double rbf_weight(double distance, double sigma) {
  return std::exp(-(distance * distance) / (2.0 * sigma * sigma));
}

/// Brute-force K-NN over previous positions of active points. Ties are broken
/// by map index.
DeformationGraph build_graph(std::span<const MapPoint> map, int k, double sigma);

/// Constant velocity in the world-to-camera chain:
/// (previous * before_previous^-1) * previous.
Pose predict_pose(const Pose& previous, const Pose& before_previous);

/// r = u - project(T (anchor + (displacement + delta))); blocks: pose (7,
/// PoseManifold), delta (3).
class ReprojectionCost final : public nlls::CostFunction {
 public:
  ReprojectionCost(const CameraModel& camera, Eigen::Vector2d observed,
                   Eigen::Vector3d anchor, Eigen::Vector3d displacement)
      : camera_(&camera),
        observed_(std::move(observed)),
        anchor_(std::move(anchor)),
        displacement_(std::move(displacement)) {}
  int residual_size() const override { return 2; }
  bool evaluate(std::span<const nlls::Vector* const> parameters,
                nlls::Vector& residual,
                std::span<nlls::Matrix*> jacobians) const override;

 private:
  const CameraModel* camera_;
  Eigen::Vector2d observed_;
  Eigen::Vector3d anchor_;
  Eigen::Vector3d displacement_;
};

/// r = w (delta_i - delta_j)
class SpatialCost final : public nlls::CostFunction {
 public:
  explicit SpatialCost(double weight) : weight_(weight) {}
  int residual_size() const override { return 3; }
  bool evaluate(std::span<const nlls::Vector* const> parameters,
                nlls::Vector& residual,
                std::span<nlls::Matrix*> jacobians) const override;

 private:
  double weight_;
};

/// r = delta_i
class TemporalCost final : public nlls::CostFunction {
 public:
  int residual_size() const override { return 3; }
  bool evaluate(std::span<const nlls::Vector* const> parameters,
                nlls::Vector& residual,
                std::span<nlls::Matrix*> jacobians) const override;
};

struct DeformOptions {
  /// Standard deviations: pixels for reprojection, map units for the
  /// regularisers.
  double sigma_reprojection = 1.0;
  double sigma_spatial = 10.0;
  double sigma_temporal = 10.0;
  double lambda_spatial = 1.0;
  double lambda_temporal = 1.0;
  double huber_reprojection = nlls::kChi2_95_2Dof;
  double huber_regularizer = nlls::kChi2_95_3Dof;
  int graph_k = 20;
  double graph_sigma = 15.0;
  /// Points whose post-fit squared Mahalanobis reprojection error exceeds
  /// this are marked lost.
  double lost_gate = nlls::kChi2_95_2Dof;
  int min_observations = 6;
  nlls::SolverOptions rigid_solver{.max_iterations = 20};
  nlls::SolverOptions joint_solver{.max_iterations = 30};
};

/// Pose-only robust reprojection solve against previous positions. Falls
/// back to `predicted` (and sets *ok = false) with fewer than
/// min_observations usable points or on solver failure.
Pose refine_pose_rigid(const Pose& predicted,
                       std::span<const Observation> observations,
                       std::span<const MapPoint> map,
                       const CameraModel& camera, const DeformOptions& options,
                       bool* ok = nullptr);

enum class FrameStatus { kTracked, kRigidFallback, kFailed };

const char* to_string(FrameStatus status);

struct FrameState {
  int frame = 0;
  Pose pose;  // T_{C^t W}
  FrameStatus status = FrameStatus::kTracked;
  /// Per-point deformation increments of this frame (map id -> delta).
  std::vector<std::pair<int, Eigen::Vector3d>> increments;
  std::vector<Observation> observations;
  nlls::SolverSummary summary;
  int active_points = 0;
  int lost_this_frame = 0;
};

/// Owns the map and pose history of one sequence; frames must be fed in
/// order.
class DeformableTracker {
 public:
  DeformableTracker(CameraModel camera, std::vector<MapPoint> map,
                    DeformOptions options);

  /// Seeds the constant-velocity model with the last two known poses.
  void set_pose_history(const Pose& before_previous, const Pose& previous);

  /// Joint robust estimation of the pose and per-point increments given the
  /// observations of this frame, then commits displacement += increment.
  FrameState track_frame(int frame, std::span<const Observation> observations);

  /// Cost of the joint problem at (pose, increments = 0), for diagnostics.
  double joint_cost(const Pose& pose, std::span<const Observation> observations,
                    const DeformationGraph& graph) const;

  const std::vector<MapPoint>& map() const { return map_; }
  const CameraModel& camera() const { return camera_; }
  const DeformOptions& options() const { return options_; }
  const Pose& last_pose() const { return previous_; }
  int active_count() const;

 private:
  int index_of(int id) const;
  nlls::Problem build_joint_problem(const Pose& seed,
                                    std::span<const Observation> observations,
                                    const DeformationGraph& graph,
                                    std::vector<int>* delta_blocks) const;

  CameraModel camera_;
  std::vector<MapPoint> map_;
  std::unordered_map<int, int> index_;
  DeformOptions options_;
  Pose before_previous_;
  Pose previous_;
};

}  // namespace deftrack
