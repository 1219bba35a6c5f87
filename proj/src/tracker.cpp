#include "deftrack/tracker.hpp"

#include <ostream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "deftrack/io.hpp"

namespace deftrack {

namespace {

bool patch_inside(const PyramidLevel& level, const Eigen::Vector2d& origin,
                  int size) {
  return origin.x() >= 0.0 && origin.y() >= 0.0 &&
         origin.x() + size - 1 <= level.width() - 1 &&
         origin.y() + size - 1 <= level.height() - 1;
}

enum class LevelResult { kConverged, kNotConverged, kOutside, kIllConditioned };

// Gauss-Newton on one pyramid level. `d` is the displacement of the patch
// centre at this level's scale.
LevelResult refine_level(const PyramidLevel& level, const Patch& reference,
                         const Eigen::Vector2d& center, Eigen::Vector2d& d,
                         double& gain, double& bias,
                         const TrackerOptions& options) {
  const int size = static_cast<int>(reference.rows());
  const double half = 0.5 * (size - 1);
  for (int it = 0; it < options.max_iterations; ++it) {
    const Eigen::Vector2d origin = center + d - Eigen::Vector2d(half, half);
    if (!patch_inside(level, origin, size)) return LevelResult::kOutside;
    Eigen::Matrix4d normal = Eigen::Matrix4d::Zero();
    Eigen::Vector4d rhs = Eigen::Vector4d::Zero();
    for (int r = 0; r < size; ++r) {
      const double y = origin.y() + r;
      for (int c = 0; c < size; ++c) {
        const double x = origin.x() + c;
        const double value = sample_bilinear(level.image, x, y);
        const double gx = sample_bilinear(level.grad_x, x, y);
        const double gy = sample_bilinear(level.grad_y, x, y);
        const double residual = reference(r, c) - gain * value - bias;
        const Eigen::Vector4d jac(-gain * gx, -gain * gy, -value, -1.0);
        normal.selfadjointView<Eigen::Lower>().rankUpdate(jac);
        rhs += jac * residual;
      }
    }
    normal.triangularView<Eigen::StrictlyUpper>() =
        normal.triangularView<Eigen::StrictlyLower>().transpose();
    const Eigen::Vector4d diag = normal.diagonal();
    if ((diag.array() <= 0.0).any()) return LevelResult::kIllConditioned;
    const Eigen::Vector4d inv_scale = diag.cwiseSqrt().cwiseInverse();
    const Eigen::Matrix4d scaled =
        inv_scale.asDiagonal() * normal * inv_scale.asDiagonal();
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(
        scaled, Eigen::EigenvaluesOnly);
    const double min_ev = eig.eigenvalues()(0);
    const double max_ev = eig.eigenvalues()(3);
    if (!(min_ev > 0.0) || max_ev / min_ev > options.max_condition) {
      return LevelResult::kIllConditioned;
    }
    const Eigen::Vector4d step =
        -(inv_scale.asDiagonal() *
          scaled.ldlt().solve(inv_scale.asDiagonal() * rhs));
    d += step.head<2>();
    gain += step(2);
    bias += step(3);
    if (step.head<2>().norm() < options.convergence_px) {
      return LevelResult::kConverged;
    }
  }
  return LevelResult::kNotConverged;
}

void track_one(const Pyramid& current, TrackedFeature& f,
               const TrackerOptions& options) {
  const int levels = std::min(current.num_levels(),
                              static_cast<int>(f.reference_patches.size()));
  if (levels == 0) {
    f.status = TrackStatus::kLost;
    return;
  }
  Eigen::Vector2d d = (f.current_pixel - f.reference_pixel) /
                      static_cast<double>(1 << (levels - 1));
  double gain = f.gain;
  double bias = f.bias;
  for (int level = levels - 1; level >= 0; --level) {
    if (level != levels - 1) d *= 2.0;
    const double scale = 1.0 / static_cast<double>(1 << level);
    Eigen::Vector2d d_level = d;
    double gain_level = gain, bias_level = bias;
    const LevelResult result =
        refine_level(current[level], f.reference_patches[level],
                     f.reference_pixel * scale, d_level, gain_level,
                     bias_level, options);
    if (level == 0) {
      if (result != LevelResult::kConverged || !(gain_level > 0.0)) {
        f.status = TrackStatus::kLost;
        return;
      }
    } else if (result == LevelResult::kOutside ||
               result == LevelResult::kIllConditioned) {
      // Coarse levels near the border or on flat regions carry no usable
      // signal; keep the incoming estimate and continue on the finer level.
      continue;
    }
    d = d_level;
    gain = gain_level;
    bias = bias_level;
  }
  f.current_pixel = f.reference_pixel + d;
  f.gain = gain;
  f.bias = bias;
}

}  // namespace

const char* to_string(TrackStatus status) {
  switch (status) {
    case TrackStatus::kTracked:
      return "tracked";
    case TrackStatus::kLost:
      return "lost";
    case TrackStatus::kRejected:
      return "rejected";
  }
  return "unknown";
}

Patch sample_patch(const ImageArray& image, const Eigen::Vector2d& center,
                   int size) {
  const double half = 0.5 * (size - 1);
  Patch patch(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      patch(r, c) = sample_bilinear(image, center.x() - half + c,
                                    center.y() - half + r);
    }
  }
  return patch;
}

std::vector<Patch> sample_reference_patches(const Pyramid& pyramid,
                                            const Eigen::Vector2d& pixel,
                                            int size) {
  std::vector<Patch> out;
  out.reserve(pyramid.num_levels());
  for (int level = 0; level < pyramid.num_levels(); ++level) {
    const double scale = 1.0 / static_cast<double>(1 << level);
    out.push_back(sample_patch(pyramid[level].image, pixel * scale, size));
  }
  return out;
}

std::vector<TrackedFeature> make_features(const Pyramid& pyramid,
                                          std::span<const Keypoint> keypoints,
                                          int first_id,
                                          const TrackerOptions& options) {
  std::vector<TrackedFeature> out;
  out.reserve(keypoints.size());
  int id = first_id;
  for (const Keypoint& kp : keypoints) {
    TrackedFeature f;
    f.id = id++;
    f.reference_pixel = kp.position;
    f.current_pixel = kp.position;
    f.initial_pixel = kp.position;
    f.reference_patches =
        sample_reference_patches(pyramid, kp.position, options.patch_size);
    out.push_back(std::move(f));
  }
  return out;
}

void track_features(const Pyramid& current, std::span<TrackedFeature> features,
                    const TrackerOptions& options) {
  for (TrackedFeature& f : features) {
    if (f.active()) track_one(current, f, options);
  }
}

void track_features(const Pyramid& reference, const Pyramid& current,
                    std::span<TrackedFeature> features,
                    const TrackerOptions& options) {
  if (reference.num_levels() != current.num_levels()) {
    throw ImageError("reference and current pyramids differ in level count");
  }
  for (TrackedFeature& f : features) {
    if (!f.active()) continue;
    f.reference_patches = sample_reference_patches(reference, f.reference_pixel,
                                                   options.patch_size);
  }
  track_features(current, features, options);
}

double ssim(const Patch& x, const Patch& y, double c1, double c2) {
  if (x.rows() != y.rows() || x.cols() != y.cols()) {
    throw std::invalid_argument("ssim: patch sizes differ");
  }
  const double n = static_cast<double>(x.size());
  const double mx = x.mean();
  const double my = y.mean();
  const double vx = (x - mx).square().sum() / n;
  const double vy = (y - my).square().sum() / n;
  const double cxy = ((x - mx) * (y - my)).sum() / n;
  return ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
         ((mx * mx + my * my + c1) * (vx + vy + c2));
}

void gate_outliers(const Pyramid& current, std::span<TrackedFeature> features,
                   double threshold, const TrackerOptions& options) {
  for (TrackedFeature& f : features) {
    if (!f.active()) continue;
    const Patch tracked =
        sample_patch(current[0].image, f.current_pixel, options.patch_size);
    f.ssim = ssim(f.reference_patches[0], tracked, options.ssim_c1,
                  options.ssim_c2);
    if (f.ssim < threshold) f.status = TrackStatus::kRejected;
  }
}

void refresh_patches(const Pyramid& current, std::span<TrackedFeature> features,
                     int period, const TrackerOptions& options) {
  for (TrackedFeature& f : features) {
    if (!f.active()) continue;
    if (++f.frames_since_refresh < period) continue;
    f.reference_patches =
        sample_reference_patches(current, f.current_pixel, options.patch_size);
    f.reference_pixel = f.current_pixel;
    f.gain = 1.0;
    f.bias = 0.0;
    f.frames_since_refresh = 0;
  }
}

void write_track_header(std::ostream& out) {
  out << "frame,id,u_x,u_y,alpha,beta,ssim,status\n";
}

void write_track_rows(std::ostream& out, int frame,
                      std::span<const TrackedFeature> features) {
  precise(out);
  for (const TrackedFeature& f : features) {
    out << frame << ',' << f.id << ',' << f.current_pixel.x() << ','
        << f.current_pixel.y() << ',' << f.gain << ',' << f.bias << ','
        << f.ssim << ',' << to_string(f.status) << '\n';
  }
}

}  // namespace deftrack
