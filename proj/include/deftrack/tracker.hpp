#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "deftrack/features.hpp"
#include "deftrack/image.hpp"

namespace deftrack {

using Patch = Eigen::ArrayXXd;

enum class TrackStatus { kTracked, kLost, kRejected };

const char* to_string(TrackStatus status);

struct TrackerOptions {
  int patch_size = 11;
  int max_iterations = 30;
  double convergence_px = 0.01;
  /// Upper bound on the condition number of the Jacobi-scaled 4x4 normal
  /// matrix.
  double max_condition = 1e8;
  double ssim_threshold = 0.8;
  int refresh_period = 5;
  double ssim_c1 = (0.01 * 255.0) * (0.01 * 255.0);
  double ssim_c2 = (0.03 * 255.0) * (0.03 * 255.0);
};

/// A feature tracked with the affine photometric model
///   min_{d, gain, bias} sum_v (I_ref(v) - gain * I_cur(v + d) - bias)^2
/// over a square patch centred at the reference pixel.
struct TrackedFeature {
  int id = 0;
  /// Reference patches, one per pyramid level, sampled around
  /// reference_pixel * 2^-level.
  std::vector<Patch> reference_patches;
  Eigen::Vector2d reference_pixel = Eigen::Vector2d::Zero();
  Eigen::Vector2d current_pixel = Eigen::Vector2d::Zero();
  /// Pixel where the feature was first detected; never refreshed.
  Eigen::Vector2d initial_pixel = Eigen::Vector2d::Zero();
  double gain = 1.0;
  double bias = 0.0;
  double ssim = 1.0;
  TrackStatus status = TrackStatus::kTracked;
  int frames_since_refresh = 0;

  bool active() const { return status == TrackStatus::kTracked; }
};

/// Square patch of `size` x `size` bilinear samples centred at `center`.
Patch sample_patch(const ImageArray& image, const Eigen::Vector2d& center,
                   int size);

/// Samples reference patches for every pyramid level.
std::vector<Patch> sample_reference_patches(const Pyramid& pyramid,
                                            const Eigen::Vector2d& pixel,
                                            int size);

/// Creates features at the given keypoints, ids starting at first_id.
std::vector<TrackedFeature> make_features(const Pyramid& pyramid,
                                          std::span<const Keypoint> keypoints,
                                          int first_id,
                                          const TrackerOptions& options = {});

/// Tracks every active feature into `current`, starting from its last known
/// position. Coarse to fine, Gauss-Newton on (dx, dy, gain, bias) per level.
/// Features that leave the image, produce an ill-conditioned system or fail
/// to converge on level 0 are marked lost.
void track_features(const Pyramid& current, std::span<TrackedFeature> features,
                    const TrackerOptions& options = {});

/// Re-samples reference patches from `reference` at each feature's
/// reference pixel, then tracks into `current`.
void track_features(const Pyramid& reference, const Pyramid& current,
                    std::span<TrackedFeature> features,
                    const TrackerOptions& options = {});

/// Structural similarity of two equally sized patches (population moments).
double ssim(const Patch& x, const Patch& y, double c1, double c2);

/// Computes SSIM between each active feature's level-0 reference patch and
/// the patch around its current pixel; features below the threshold are
/// marked rejected.
void gate_outliers(const Pyramid& current, std::span<TrackedFeature> features,
                   double threshold, const TrackerOptions& options = {});

/// Advances the refresh counter of active features; when it reaches
/// `period` the reference patches are re-sampled at the current pixel and
/// gain/bias reset to (1, 0).
void refresh_patches(const Pyramid& current, std::span<TrackedFeature> features,
                     int period, const TrackerOptions& options = {});

/// CSV rows: frame,id,u_x,u_y,alpha,beta,ssim,status
void write_track_header(std::ostream& out);
void write_track_rows(std::ostream& out, int frame,
                      std::span<const TrackedFeature> features);

}  // namespace deftrack
