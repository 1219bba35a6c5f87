#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "deftrack/deform_tracking.hpp"
#include "deftrack/geometry.hpp"
#include "deftrack/image.hpp"

namespace deftrack::sim {

enum class Surface { kTube, kPlane };

/// Camera keyframe: world position and orientation (roll about z, pitch
/// about x, yaw about y, degrees) of a camera looking along its +z axis.
struct Keyframe {
  int frame = 0;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d roll_pitch_yaw_deg = Eigen::Vector3d::Zero();
};

/// Scene description. Lengths are scene milli-units (mm). The tube runs
/// along +z from z = 0 to tube_length and is capped at the far end; the
/// plane sits at z = plane_distance facing the camera.
struct SceneConfig {
  Surface surface = Surface::kTube;
  double tube_radius = 25.0;
  double tube_length = 200.0;
  double plane_width = 200.0;
  double plane_height = 150.0;
  double plane_distance = 60.0;
  int mesh_around = 128;
  int mesh_along = 400;

  double amplitude = 0.0;
  double omega = 0.0;
  double phase_scale = 1.0 / 25.0;
  double fps = 30.0;
  int frames = 100;

  CameraModel camera = CameraModel::pinhole(320.0, 320.0, 319.5, 239.5, 640, 480);
  std::vector<Keyframe> trajectory = {
      {0, {0.0, 0.0, 5.0}, {0.0, 0.0, 0.0}},
      {99, {0.0, 0.0, 45.0}, {0.0, 0.0, 0.0}}};
  /// When set, the camera keeps this world point on its optical axis and the
  /// keyframe pitch and yaw are ignored (roll still applies).
  std::optional<Eigen::Vector3d> look_at;

  double gain_min = 1.0, gain_max = 1.0;
  double bias_min = 0.0, bias_max = 0.0;
  double pixel_noise = 0.0;  // image noise, intensity levels
  double track_noise = 0.0;  // observation noise, pixels

  double texture_scale = 6.0;  // feature size of the coarsest octave
  int texture_octaves = 3;
  double texture_contrast = 70.0;
  double light_range = 0.0;  // 0 disables distance fall-off
  double background = 0.0;

  int candidate_points = 20000;
  int grid_rows = 10;
  int grid_cols = 10;
  int points_per_cell = 3;
  int border = 8;

  std::uint64_t seed = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

SceneConfig parse_scene_config(std::istream& in, const std::string& source = "");
SceneConfig load_scene_config(const std::filesystem::path& path);
void write_scene_config(std::ostream& out, const SceneConfig& config);

/// V_y = V_y^0 + A sin(omega t + phase_scale (V_x^0 + V_y^0 + V_z^0)); x and
/// z unchanged.
std::vector<Eigen::Vector3d> deform_vertices(
    std::span<const Eigen::Vector3d> rest, double amplitude, double omega,
    double time, double phase_scale = 1.0);
Eigen::Vector3d deform_vertex(const Eigen::Vector3d& rest, double amplitude,
                              double omega, double time, double phase_scale = 1.0);

/// World-to-camera pose of a keyframed trajectory at `frame` (linear
/// position, slerped orientation, clamped at the ends).
Pose trajectory_pose(std::span<const Keyframe> trajectory, double frame,
                     const std::optional<Eigen::Vector3d>& look_at = {});

struct SceneTruth {
  std::vector<Pose> poses;  // world -> camera, per frame
  std::vector<int> point_ids;
  std::vector<Eigen::Vector3d> rest_points;
  std::vector<std::vector<Eigen::Vector3d>> points;  // per frame, per point
  std::vector<double> times;
};

/// Samples candidate surface points, keeps a grid-distributed subset visible
/// in frame 0 and evaluates their deformed positions for every frame.
SceneTruth generate_truth(const SceneConfig& config);

struct Mesh {
  std::vector<Eigen::Vector3d> rest;
  std::vector<Eigen::Vector3i> triangles;
};

Mesh build_mesh(const SceneConfig& config);

/// Smooth multi-octave value noise in [-1, 1].
double value_noise(const Eigen::Vector3d& p, std::uint64_t seed, int octaves,
                   double scale);

struct RenderResult {
  ImageBuffer image;
  Eigen::ArrayXXd depth;       // camera z, 0 where nothing was hit
  std::vector<Eigen::Vector3d> rest;  // rest coordinates per pixel (row-major)
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> hit;
  double gain = 1.0;
  double bias = 0.0;
};

/// Rasterises the deformed mesh with perspective-correct interpolation of
/// rest coordinates; intensity is texture(rest) with optional fall-off, then
/// gain * I + bias, then Gaussian noise.
RenderResult render_frame(const SceneConfig& config, const Mesh& mesh,
                          const SceneTruth& truth, int frame);

/// Per-frame projections of the tracked points (in-bounds, positive depth),
/// with Gaussian noise of config.track_noise pixels.
std::vector<std::vector<Observation>> emit_observations(
    const SceneConfig& config, const SceneTruth& truth);

/// Number of mesh vertices projecting into the image at `frame`.
int visible_vertex_count(const SceneConfig& config, const Mesh& mesh,
                         const SceneTruth& truth, int frame);

/// Ground-truth expressed in the camera-0 frame, the tracker's world frame.
struct CameraZeroTruth {
  std::vector<Pose> poses;  // T_{C^t C^0}
  std::vector<std::vector<Eigen::Vector3d>> points;
};
CameraZeroTruth to_camera_zero(const SceneTruth& truth);

/// Writes poses CSV (T_{C^t C^0}), long-format point CSV (id,frame,x,y,z in
/// the camera-0 frame) and optionally one PLY per frame.
void write_truth(const std::filesystem::path& dir, const SceneTruth& truth,
                 bool per_frame_ply);

}  // namespace deftrack::sim
