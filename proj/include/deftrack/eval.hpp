#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "deftrack/geometry.hpp"

namespace deftrack::eval {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed-form s minimising sum |s est_i - truth_i|^2. Throws EvalError on
/// empty input, size mismatch or an all-zero estimate.
double optimal_scale(std::span<const Eigen::Vector3d> estimated,
                     std::span<const Eigen::Vector3d> truth);

/// sqrt(sum |s est_i - truth_i|^2 / n). Throws EvalError on empty input.
double rmse_frame(std::span<const Eigen::Vector3d> estimated,
                  std::span<const Eigen::Vector3d> truth, double scale);

/// Points of one frame keyed by point id.
struct PointFrame {
  int frame = 0;
  std::vector<int> ids;
  std::vector<Eigen::Vector3d> points;
};

struct FrameError {
  int frame = 0;
  int matched = 0;
  double scale = 0.0;
  double rmse = 0.0;
  double sum_squared = 0.0;
  /// Median |X^t - X^{t-1}| of the estimate in its own units; NaN on the first
  /// frame.
  double median_step = 0.0;
};

struct EvalReport {
  std::vector<FrameError> frames;
  /// Pooled over every matched point of every frame.
  double sequence_rmse = 0.0;
  double mean_frame_rmse = 0.0;
  double max_frame_rmse = 0.0;
  /// Camera-centre error after one similarity alignment of the whole
  /// trajectory. Diagnostic only; NaN when fewer than 3 poses match.
  double ate_rmse = 0.0;
  double ate_scale = 0.0;
  double mean_seconds = 0.0;
  double max_seconds = 0.0;
};

/// Frames and points are matched by frame index and point id. Frames without
/// any matched point are skipped. Throws EvalError when nothing matches.
EvalReport evaluate(std::span<const PointFrame> estimated,
                    std::span<const PointFrame> truth,
                    const std::map<int, Pose>& estimated_poses = {},
                    const std::map<int, Pose>& truth_poses = {},
                    std::span<const double> frame_seconds = {});

/// Similarity-aligned RMSE of camera centres (poses map world to camera).
/// Returns {rmse, scale}.
std::pair<double, double> trajectory_error(const std::map<int, Pose>& estimated,
                                           const std::map<int, Pose>& truth);

/// Long-format `id,frame,x,y,z` table.
std::vector<PointFrame> read_point_table(const std::filesystem::path& path);
void write_point_rows(std::ostream& out, const PointFrame& frame);
/// `frame,tx,ty,tz,qx,qy,qz,qw` table.
std::map<int, Pose> read_pose_table(const std::filesystem::path& path);

void write_report_csv(std::ostream& out, const EvalReport& report);
void write_report_text(std::ostream& out, const EvalReport& report);

/// Key of one sweep cell: (amplitude, omega).
using GridCell = std::pair<double, double>;

struct Verdict {
  std::string name;
  bool evaluated = false;
  bool pass = false;
};

struct TrendReport {
  std::string table;
  std::vector<Verdict> verdicts;
  /// True when at least one ordering was evaluated and none failed.
  bool pass = false;
};

/// Table laid out with amplitude rows and omega columns, plus the orderings
/// rigid < (2.5, 2.5) < (10, 5) and, for every amplitude >= 5, RMSE
/// non-decreasing in omega. Orderings with missing cells are not evaluated.
/// Throws EvalError with fewer than 2 cells.
TrendReport trend_report(const std::map<GridCell, double>& rmse);

}  // namespace deftrack::eval
