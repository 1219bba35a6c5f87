#include "deftrack/deform_tracking.hpp"

#include <algorithm>
#include <numeric>

namespace deftrack {

namespace {

bool safe_project(const CameraModel& camera, const Eigen::Vector3d& p,
                  Eigen::Vector2d& pixel, Eigen::Matrix<double, 2, 3>* jac) {
  if (camera.kind == CameraKind::kPinhole && !(p.z() > 1e-12)) return false;
  try {
    pixel = project(camera, p, jac);
  } catch (const BehindCameraError&) {
    return false;
  }
  return true;
}

}  // namespace

DeformationGraph build_graph(std::span<const MapPoint> map, int k,
                             double sigma) {
  DeformationGraph graph;
  graph.sigma = sigma;
  graph.neighbors.resize(map.size());
  std::vector<int> active;
  for (int i = 0; i < static_cast<int>(map.size()); ++i) {
    if (map[i].active()) active.push_back(i);
  }
  std::vector<std::pair<double, int>> candidates;
  for (int i : active) {
    const Eigen::Vector3d pi = map[i].previous_position();
    candidates.clear();
    for (int j : active) {
      if (j == i) continue;
      candidates.emplace_back((map[j].previous_position() - pi).squaredNorm(), j);
    }
    const std::size_t keep =
        std::min<std::size_t>(static_cast<std::size_t>(std::max(k, 0)),
                              candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + keep,
                      candidates.end());
    auto& edges = graph.neighbors[i];
    edges.reserve(keep);
    for (std::size_t n = 0; n < keep; ++n) {
      edges.push_back({candidates[n].second,
                       rbf_weight(std::sqrt(candidates[n].first), sigma)});
    }
  }
  return graph;
}

Pose predict_pose(const Pose& previous, const Pose& before_previous) {
  const Pose velocity = previous * before_previous.inverse();
  return velocity * previous;
}

bool ReprojectionCost::evaluate(std::span<const nlls::Vector* const> parameters,
                                nlls::Vector& residual,
                                std::span<nlls::Matrix*> jacobians) const {
  const Pose pose = nlls::pose_from_vector(*parameters[0]);
  const Eigen::Vector3d delta = parameters[1]->head<3>();
  const Eigen::Vector3d world = anchor_ + (displacement_ + delta);
  const Eigen::Vector3d cam = pose * world;
  const bool want_jac = !jacobians.empty() &&
                        (jacobians[0] != nullptr || jacobians[1] != nullptr);
  Eigen::Matrix<double, 2, 3> jproj;
  Eigen::Vector2d pixel;
  if (!safe_project(*camera_, cam, pixel, want_jac ? &jproj : nullptr)) {
    return false;
  }
  residual = observed_ - pixel;
  if (want_jac) {
    if (jacobians[0] != nullptr) {
      Eigen::Matrix<double, 3, 6> dcam;
      dcam << Eigen::Matrix3d::Identity(), -skew(cam);
      *jacobians[0] = -jproj * dcam;
    }
    if (jacobians[1] != nullptr) *jacobians[1] = -jproj * pose.rotation();
  }
  return true;
}

bool SpatialCost::evaluate(std::span<const nlls::Vector* const> parameters,
                           nlls::Vector& residual,
                           std::span<nlls::Matrix*> jacobians) const {
  residual = weight_ * (parameters[0]->head<3>() - parameters[1]->head<3>());
  if (!jacobians.empty()) {
    if (jacobians[0] != nullptr) {
      *jacobians[0] = weight_ * Eigen::Matrix3d::Identity();
    }
    if (jacobians[1] != nullptr) {
      *jacobians[1] = -weight_ * Eigen::Matrix3d::Identity();
    }
  }
  return true;
}

bool TemporalCost::evaluate(std::span<const nlls::Vector* const> parameters,
                            nlls::Vector& residual,
                            std::span<nlls::Matrix*> jacobians) const {
  residual = parameters[0]->head<3>();
  if (!jacobians.empty() && jacobians[0] != nullptr) {
    *jacobians[0] = Eigen::Matrix3d::Identity();
  }
  return true;
}

Pose refine_pose_rigid(const Pose& predicted,
                       std::span<const Observation> observations,
                       std::span<const MapPoint> map,
                       const CameraModel& camera, const DeformOptions& options,
                       bool* ok) {
  if (ok != nullptr) *ok = false;
  std::unordered_map<int, int> index;
  for (int i = 0; i < static_cast<int>(map.size()); ++i) index[map[i].id] = i;

  nlls::Problem problem;
  const int pose_block = problem.add_parameter_block(
      nlls::pose_to_vector(predicted), std::make_shared<nlls::PoseManifold>());
  const int zero_block = problem.add_parameter_block(nlls::Vector::Zero(3));
  problem.set_fixed(zero_block);
  const nlls::Vector sigma = nlls::Vector::Constant(2, options.sigma_reprojection);
  int used = 0;
  for (const Observation& obs : observations) {
    const auto it = index.find(obs.point_id);
    if (it == index.end() || !map[it->second].active()) continue;
    const MapPoint& p = map[it->second];
    Eigen::Vector2d pixel;
    if (!safe_project(camera, predicted * p.previous_position(), pixel, nullptr)) {
      continue;
    }
    problem.add_residual_block(
        std::make_shared<ReprojectionCost>(camera, obs.pixel, p.anchor,
                                           p.displacement),
        {pose_block, zero_block}, sigma, options.huber_reprojection);
    ++used;
  }
  if (used < options.min_observations) return predicted;
  const nlls::SolverSummary summary = nlls::solve(problem, options.rigid_solver);
  if (summary.status == nlls::SolverStatus::kFailed) return predicted;
  if (ok != nullptr) *ok = true;
  return nlls::pose_from_vector(problem.value(pose_block));
}

const char* to_string(FrameStatus status) {
  switch (status) {
    case FrameStatus::kTracked:
      return "tracked";
    case FrameStatus::kRigidFallback:
      return "rigid_fallback";
    case FrameStatus::kFailed:
      return "failed";
  }
  return "unknown";
}

DeformableTracker::DeformableTracker(CameraModel camera,
                                     std::vector<MapPoint> map,
                                     DeformOptions options)
    : camera_(std::move(camera)), map_(std::move(map)), options_(options) {
  for (int i = 0; i < static_cast<int>(map_.size()); ++i) {
    index_[map_[i].id] = i;
  }
}

void DeformableTracker::set_pose_history(const Pose& before_previous,
                                         const Pose& previous) {
  before_previous_ = before_previous;
  previous_ = previous;
}

int DeformableTracker::index_of(int id) const {
  const auto it = index_.find(id);
  return it == index_.end() ? -1 : it->second;
}

int DeformableTracker::active_count() const {
  return static_cast<int>(std::count_if(map_.begin(), map_.end(),
                                        [](const MapPoint& p) { return p.active(); }));
}

nlls::Problem DeformableTracker::build_joint_problem(
    const Pose& seed, std::span<const Observation> observations,
    const DeformationGraph& graph, std::vector<int>* delta_blocks) const {
  nlls::Problem problem;
  const int pose_block = problem.add_parameter_block(
      nlls::pose_to_vector(seed), std::make_shared<nlls::PoseManifold>());
  std::vector<int> blocks(map_.size(), -1);
  for (int i = 0; i < static_cast<int>(map_.size()); ++i) {
    if (map_[i].active()) {
      blocks[i] = problem.add_parameter_block(map_[i].increment);
    }
  }
  const nlls::Vector sigma_rep =
      nlls::Vector::Constant(2, options_.sigma_reprojection);
  const nlls::Vector sigma_spa = nlls::Vector::Constant(3, options_.sigma_spatial);
  const nlls::Vector sigma_tmp =
      nlls::Vector::Constant(3, options_.sigma_temporal);
  for (const Observation& obs : observations) {
    const int i = index_of(obs.point_id);
    if (i < 0 || blocks[i] < 0) continue;
    const MapPoint& p = map_[i];
    problem.add_residual_block(
        std::make_shared<ReprojectionCost>(camera_, obs.pixel, p.anchor,
                                           p.displacement),
        {pose_block, blocks[i]}, sigma_rep, options_.huber_reprojection);
  }
  const auto temporal = std::make_shared<TemporalCost>();
  for (int i = 0; i < static_cast<int>(map_.size()); ++i) {
    if (blocks[i] < 0) continue;
    for (const GraphEdge& e : graph.neighbors[i]) {
      if (blocks[e.neighbor] < 0) continue;
      problem.add_residual_block(std::make_shared<SpatialCost>(e.weight),
                                 {blocks[i], blocks[e.neighbor]}, sigma_spa,
                                 options_.huber_regularizer,
                                 options_.lambda_spatial);
    }
    problem.add_residual_block(temporal, {blocks[i]}, sigma_tmp,
                               options_.huber_regularizer,
                               options_.lambda_temporal);
  }
  if (delta_blocks != nullptr) *delta_blocks = std::move(blocks);
  return problem;
}

double DeformableTracker::joint_cost(const Pose& pose,
                                     std::span<const Observation> observations,
                                     const DeformationGraph& graph) const {
  const nlls::Problem problem =
      build_joint_problem(pose, observations, graph, nullptr);
  double cost = 0.0;
  problem.total_cost(cost);
  return cost;
}

FrameState DeformableTracker::track_frame(
    int frame, std::span<const Observation> observations) {
  FrameState state;
  state.frame = frame;

  // Points without an observation this frame are lost for good; observations
  // of unknown or lost points, or of points behind the predicted camera, are
  // dropped.
  std::vector<char> observed(map_.size(), 0);
  std::vector<Observation> usable;
  const Pose predicted = predict_pose(previous_, before_previous_);
  for (const Observation& obs : observations) {
    const int i = index_of(obs.point_id);
    if (i < 0 || !map_[i].active() || observed[i]) continue;
    observed[i] = 1;
    usable.push_back(obs);
  }
  for (std::size_t i = 0; i < map_.size(); ++i) {
    if (map_[i].active() && !observed[i]) {
      map_[i].status = PointStatus::kLost;
      ++state.lost_this_frame;
    }
  }

  bool rigid_ok = false;
  const Pose rigid =
      refine_pose_rigid(predicted, usable, map_, camera_, options_, &rigid_ok);

  // Observations that cannot be projected from the seed cannot constrain
  // the joint problem.
  std::vector<Observation> kept;
  for (const Observation& obs : usable) {
    const int i = index_of(obs.point_id);
    Eigen::Vector2d pixel;
    if (safe_project(camera_, rigid * map_[i].previous_position(), pixel,
                     nullptr)) {
      kept.push_back(obs);
    } else {
      map_[i].status = PointStatus::kLost;
      ++state.lost_this_frame;
    }
  }
  state.observations = kept;

  if (static_cast<int>(kept.size()) < options_.min_observations) {
    state.status = FrameStatus::kFailed;
    state.pose = rigid;
    state.active_points = active_count();
    before_previous_ = previous_;
    previous_ = rigid;
    return state;
  }

  for (MapPoint& p : map_) p.increment.setZero();
  const DeformationGraph graph =
      build_graph(map_, options_.graph_k, options_.graph_sigma);
  std::vector<int> blocks;
  nlls::Problem problem = build_joint_problem(rigid, kept, graph, &blocks);
  state.summary = nlls::solve(problem, options_.joint_solver);

  if (state.summary.status == nlls::SolverStatus::kFailed) {
    state.status = rigid_ok ? FrameStatus::kRigidFallback : FrameStatus::kFailed;
    state.pose = rigid;
  } else {
    state.status = FrameStatus::kTracked;
    state.pose = nlls::pose_from_vector(problem.value(0));
    for (std::size_t i = 0; i < map_.size(); ++i) {
      if (blocks[i] < 0) continue;
      map_[i].increment = problem.value(blocks[i]).head<3>();
    }
  }

  // Commit: D^t = D^{t-1} + delta^t, then gate on post-fit reprojection.
  for (std::size_t i = 0; i < map_.size(); ++i) {
    MapPoint& p = map_[i];
    if (!p.active()) continue;
    state.increments.emplace_back(p.id, p.increment);
    p.displacement = p.displacement + p.increment;
    p.increment.setZero();
  }
  const double inv_var =
      1.0 / (options_.sigma_reprojection * options_.sigma_reprojection);
  for (const Observation& obs : kept) {
    MapPoint& p = map_[index_of(obs.point_id)];
    Eigen::Vector2d pixel;
    const bool visible =
        safe_project(camera_, state.pose * p.previous_position(), pixel, nullptr);
    if (!visible || (obs.pixel - pixel).squaredNorm() * inv_var > options_.lost_gate) {
      p.status = PointStatus::kLost;
      ++state.lost_this_frame;
    }
  }
  state.active_points = active_count();
  before_previous_ = previous_;
  previous_ = state.pose;
  return state;
}

}  // namespace deftrack
