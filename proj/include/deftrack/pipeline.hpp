#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "deftrack/deform_tracking.hpp"
#include "deftrack/eval.hpp"
#include "deftrack/features.hpp"
#include "deftrack/geometry.hpp"
#include "deftrack/initializer.hpp"
#include "deftrack/tracker.hpp"

namespace deftrack {

enum class InitMode { kMonocular, kGroundTruthDepth };

/// Every tunable of a run. Regulariser scales (sigma_spatial,
/// sigma_temporal, graph_sigma) are given in milli-units and divided by
/// mm_per_unit before tracking.
struct PipelineConfig {
  int pyramid_levels = 3;
  TrackerOptions tracker;
  DetectorOptions detector;

  InitializerOptions initializer;
  InitMode init_mode = InitMode::kMonocular;
  int init_gap = 3;
  int max_init_gap = 10;

  DeformOptions deform;
  double graph_sigma_gt_depth = 55.0;
  /// Milli-units per map unit for external sequences. Simulator runs derive
  /// it from the ground-truth initialisation baseline.
  double mm_per_unit = 1.0;

  bool write_ply = false;
  int verbosity = 0;
};

/// Per-frame observations from an image folder: detection on the first frame,
/// then tracking, SSIM gating and periodic patch refresh. Rows of the track
/// dump are written to `tracks` when given.
std::vector<std::vector<Observation>> track_image_sequence(
    const std::vector<std::filesystem::path>& frames,
    const PipelineConfig& config, std::ostream* tracks = nullptr);

/// Same, for frames already in memory.
std::vector<std::vector<Observation>> track_images(
    const std::vector<ImageBuffer>& frames, const PipelineConfig& config,
    std::ostream* tracks = nullptr);

/// Optional ground truth for simulator runs, in the camera-0 frame.
struct GroundTruthHints {
  std::vector<Pose> poses;
  std::unordered_map<int, Eigen::Vector3d> first_frame_points;
};

struct FrameOutput {
  int frame = 0;
  Pose pose;
  FrameStatus status = FrameStatus::kTracked;
  eval::PointFrame points;
  int active = 0;
  int lost = 0;
  int iterations = 0;
  double final_cost = 0.0;
  double median_increment = 0.0;
  double seconds = 0.0;
};

enum class RunStatus { kOk, kInitFailed, kTrackingFailed };

struct SequenceResult {
  RunStatus status = RunStatus::kOk;
  std::string message;
  int failed_frame = -1;
  int init_frame = -1;
  double mm_per_unit = 1.0;
  InitialMap init;
  std::vector<FrameOutput> frames;  // frame 0 holds the initial map
};

/// Initialises from frames (0, k), k = init_gap .. max_init_gap, then tracks
/// every frame from 1 on. Stops at the first frame whose joint solve fails.
SequenceResult run_tracking(
    const std::vector<std::vector<Observation>>& observations,
    const CameraModel& camera, const PipelineConfig& config,
    const GroundTruthHints* hints = nullptr);

/// poses.csv, trajectories.csv, frames.csv, init_map.ply, init_pose.csv and
/// per-frame PLY clouds when config.write_ply is set.
void write_sequence_outputs(const std::filesystem::path& dir,
                            const SequenceResult& result,
                            const PipelineConfig& config);

/// `frame,id,u_x,u_y` table.
void write_observations(std::ostream& out,
                        const std::vector<std::vector<Observation>>& observations);
std::vector<std::vector<Observation>> read_observations(
    const std::filesystem::path& path);

}  // namespace deftrack
