#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "deftrack/features.hpp"
#include "deftrack/tracker.hpp"

using namespace deftrack;

namespace {

// Smooth band-limited texture so sub-pixel shifts are exact by construction.
double texture(double x, double y) {
  return 128.0 + 40.0 * std::sin(0.31 * x + 0.17 * y) +
         30.0 * std::cos(0.23 * x - 0.29 * y + 1.0) +
         20.0 * std::sin(0.11 * x * 0.7 + 0.41 * y + 2.0);
}

ImageBuffer render(double dx, double dy, double gain = 1.0, double bias = 0.0,
                   int w = 160, int h = 120) {
  ImageArray img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img(y, x) = static_cast<float>(gain * texture(x - dx, y - dy) + bias);
  return ImageBuffer(img);
}

std::vector<TrackedFeature> one_feature(const Pyramid& pyr,
                                        const Eigen::Vector2d& at) {
  const Keypoint k{at, 1.0, 0};
  return make_features(pyr, std::span(&k, 1), 0);
}

Patch ramp_patch(int n) {
  Patch p(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) p(y, x) = 10.0 * x + 3.0 * y + 7.0 * ((x * y) % 3);
  return p;
}

}  // namespace

TEST_CASE("integer shift is recovered") {
  const Pyramid ref = build_pyramid(render(0, 0), 3);
  const Pyramid cur = build_pyramid(render(3, 2), 3);
  auto f = one_feature(ref, {80, 60});
  track_features(cur, f);
  REQUIRE(f[0].active());
  CHECK((f[0].current_pixel - Eigen::Vector2d(83, 62)).norm() < 0.03);
}

TEST_CASE("gain and bias on the current image are absorbed") {
  const Pyramid ref = build_pyramid(render(0, 0), 3);
  const Pyramid cur = build_pyramid(render(3, 2, 1.3, 15.0), 3);
  auto f = one_feature(ref, {80, 60});
  track_features(cur, f);
  REQUIRE(f[0].active());
  CHECK((f[0].current_pixel - Eigen::Vector2d(83, 62)).norm() < 0.1);
  // I_ref = gain * I_cur + bias with I_cur = 1.3 I_ref + 15.
  CHECK(f[0].gain == doctest::Approx(1.0 / 1.3).epsilon(0.01));
  CHECK(f[0].bias == doctest::Approx(-15.0 / 1.3).epsilon(0.05));
}

TEST_CASE("no motion gives zero displacement and identity photometry") {
  const Pyramid ref = build_pyramid(render(0, 0), 3);
  auto f = one_feature(ref, {70.5, 50.25});
  track_features(ref, f);
  REQUIRE(f[0].active());
  CHECK((f[0].current_pixel - Eigen::Vector2d(70.5, 50.25)).norm() < 1e-6);
  CHECK(f[0].gain == doctest::Approx(1.0));
  CHECK(f[0].bias == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("features leaving the image are lost") {
  const Pyramid ref = build_pyramid(render(0, 0), 3);
  const Pyramid cur = build_pyramid(render(30, 0), 3);
  auto f = one_feature(ref, {150, 60});
  track_features(cur, f);
  CHECK(f[0].status == TrackStatus::kLost);
}

TEST_CASE("SSIM of identical patches is exactly one") {
  const Patch p = ramp_patch(11);
  CHECK(ssim(p, p, 6.5025, 58.5225) == 1.0);
}

TEST_CASE("SSIM of a biased copy equals the luminance term") {
  const Patch x = ramp_patch(11);
  const Patch y = x + 20.0;
  const double c1 = 6.5025, c2 = 58.5225;
  const double mx = x.mean(), my = y.mean();
  const double lum = (2 * mx * my + c1) / (mx * mx + my * my + c1);
  const double vx = (x - mx).square().mean();
  const double vy = (y - my).square().mean();
  const double cov = ((x - mx) * (y - my)).mean();
  const double structure = (2 * cov + c2) / (vx + vy + c2);
  CHECK(lum < 1.0);
  CHECK(structure == doctest::Approx(1.0));
  CHECK(ssim(x, y, c1, c2) == doctest::Approx(lum * structure).epsilon(1e-12));
}

TEST_CASE("SSIM of a contrast-negated patch is negative") {
  const Patch x = ramp_patch(11);
  const Patch y = 255.0 - x;
  CHECK(ssim(x, y, 6.5025, 58.5225) < 0.0);
}

TEST_CASE("outlier gate keeps good tracks and rejects saturated patches") {
  const Pyramid ref = build_pyramid(render(0, 0), 3);
  auto good = one_feature(ref, {80, 60});
  gate_outliers(ref, good, 0.8);
  CHECK(good[0].active());
  CHECK(good[0].ssim == doctest::Approx(1.0));

  ImageBuffer glare = render(0, 0);
  glare.pixels.block(50, 70, 21, 21).setConstant(255.0f);
  const Pyramid cur = build_pyramid(glare, 3);
  auto bad = one_feature(ref, {80, 60});
  gate_outliers(cur, bad, 0.8);
  CHECK(bad[0].ssim < 0.8);
  CHECK(bad[0].status == TrackStatus::kRejected);

  auto kept = one_feature(ref, {80, 60});
  gate_outliers(cur, kept, -1.0);
  CHECK(kept[0].active());
}

TEST_CASE("patch refresh follows the period contract") {
  const Pyramid ref = build_pyramid(render(0, 0), 3);
  const Pyramid cur = build_pyramid(render(2, 1), 3);
  auto f = one_feature(ref, {80, 60});
  track_features(cur, f);
  f[0].frames_since_refresh = 3;
  refresh_patches(cur, f, 5);
  CHECK(f[0].frames_since_refresh == 4);
  CHECK(f[0].reference_pixel == Eigen::Vector2d(80, 60));
  refresh_patches(cur, f, 5);
  CHECK(f[0].frames_since_refresh == 0);
  CHECK(f[0].reference_pixel == f[0].current_pixel);
  CHECK(f[0].initial_pixel == Eigen::Vector2d(80, 60));

  // Tracking again on the frame used for the refresh does not move it.
  const Eigen::Vector2d before = f[0].current_pixel;
  track_features(cur, f);
  CHECK((f[0].current_pixel - before).norm() < 1e-6);
}

TEST_CASE("lost features are never refreshed") {
  const Pyramid ref = build_pyramid(render(0, 0), 3);
  auto f = one_feature(ref, {80, 60});
  f[0].status = TrackStatus::kLost;
  f[0].current_pixel = {90, 70};
  f[0].frames_since_refresh = 4;
  refresh_patches(ref, f, 5);
  CHECK(f[0].reference_pixel == Eigen::Vector2d(80, 60));
  CHECK(f[0].frames_since_refresh == 4);
}
