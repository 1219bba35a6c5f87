#pragma once

#include <vector>

#include <Eigen/Core>

#include "deftrack/image.hpp"

namespace deftrack {

struct Keypoint {
  Eigen::Vector2d position;
  double score = 0.0;
  int cell = 0;
};

struct DetectorOptions {
  int grid_rows = 10;
  int grid_cols = 10;
  int max_per_cell = 3;
  /// Absolute score threshold. Negative selects the adaptive threshold
  /// relative_min_score * (max score in the image).
  double min_score = -1.0;
  double relative_min_score = 1e-3;
  double min_distance = 8.0;
  /// Keypoints closer than this to the border are discarded; the tracker
  /// needs at least its patch half-width.
  int border = 6;
  int window = 7;
};

/// Sobel derivatives (normalised by 1/8 so they are in intensity/pixel).
void sobel_gradients(const ImageArray& image, Eigen::ArrayXXd& gx,
                     Eigen::ArrayXXd& gy);

/// Minimum eigenvalue of the structure tensor summed over a window x window
/// neighbourhood, for every pixel (zero where the window leaves the image).
/// Indexed (row, col).
Eigen::ArrayXXd shi_tomasi_scores(const ImageArray& image, int window = 7);

/// Smaller eigenvalue of [[a, b], [b, c]].
inline double min_eigenvalue(double a, double b, double c) {
  const double half_trace = 0.5 * (a + c);
  const double half_diff = 0.5 * (a - c);
  return half_trace - std::sqrt(half_diff * half_diff + b * b);
}

/// Grid-distributed Shi-Tomasi corners on pyramid level 0. Deterministic:
/// candidates are ranked by (score desc, row, col).
std::vector<Keypoint> detect_shi_tomasi(const Pyramid& pyramid,
                                        const DetectorOptions& options = {});

}  // namespace deftrack
