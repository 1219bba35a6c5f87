#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include <Eigen/Eigenvalues>

#include "deftrack/features.hpp"
#include "deftrack/image.hpp"
#include "deftrack/image_io.hpp"

using namespace deftrack;

namespace {

ImageBuffer white_square(int w, int h, int x0, int y0, int side) {
  ImageArray img = ImageArray::Zero(h, w);
  img.block(y0, x0, side, side).setConstant(255.0f);
  return ImageBuffer(img);
}

// Structure tensor minimum eigenvalue from nested loops and an eigen solver.
double brute_force_score(const ImageArray& img, int y, int x, int window) {
  const int r = window / 2;
  Eigen::Matrix2d m = Eigen::Matrix2d::Zero();
  for (int v = y - r; v <= y + r; ++v) {
    for (int u = x - r; u <= x + r; ++u) {
      double gx = 0, gy = 0;
      const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
      for (int j = -1; j <= 1; ++j) {
        for (int i = -1; i <= 1; ++i) {
          gx += kx[j + 1][i + 1] * img(v + j, u + i) / 8.0;
          gy += kx[i + 1][j + 1] * img(v + j, u + i) / 8.0;
        }
      }
      m(0, 0) += gx * gx;
      m(0, 1) += gx * gy;
      m(1, 1) += gy * gy;
    }
  }
  m(1, 0) = m(0, 1);
  return Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(m).eigenvalues()(0);
}

}  // namespace

TEST_CASE("constant image gives constant levels and zero gradients") {
  const ImageBuffer img(ImageArray::Constant(96, 128, 77.0f));
  const Pyramid pyr = build_pyramid(img, 3);
  for (const PyramidLevel& level : pyr.levels) {
    CHECK((level.image - 77.0f).abs().maxCoeff() < 1e-4f);
    CHECK(level.grad_x.abs().maxCoeff() < 1e-4f);
    CHECK(level.grad_y.abs().maxCoeff() < 1e-4f);
  }
}

TEST_CASE("pyramid level dimensions halve") {
  const ImageBuffer img(ImageArray::Zero(480, 640));
  const Pyramid pyr = build_pyramid(img, 4);
  REQUIRE(pyr.num_levels() == 4);
  const int dims[4][2] = {{640, 480}, {320, 240}, {160, 120}, {80, 60}};
  for (int l = 0; l < 4; ++l) {
    CHECK(pyr[l].width() == dims[l][0]);
    CHECK(pyr[l].height() == dims[l][1]);
  }
}

TEST_CASE("pyramid rejects levels smaller than the minimum size") {
  const ImageBuffer img(ImageArray::Zero(40, 40));
  CHECK_THROWS_AS(build_pyramid(img, 4, 11), ImageError);
}

TEST_CASE("horizontal ramp has unit x-gradient in the interior") {
  ImageArray ramp(60, 80);
  for (int y = 0; y < 60; ++y)
    for (int x = 0; x < 80; ++x) ramp(y, x) = static_cast<float>(x);
  const Pyramid pyr = build_pyramid(ImageBuffer(ramp), 1);
  for (int y = 1; y < 59; ++y) {
    for (int x = 1; x < 79; ++x) {
      CHECK(pyr[0].grad_x(y, x) == doctest::Approx(1.0));
      CHECK(pyr[0].grad_y(y, x) == doctest::Approx(0.0));
    }
  }
}

TEST_CASE("bilinear sampling interpolates a plane exactly") {
  ImageArray img(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) img(y, x) = static_cast<float>(2 * x + 3 * y);
  CHECK(sample_bilinear(img, 4.25, 7.5) == doctest::Approx(2 * 4.25 + 3 * 7.5));
}

TEST_CASE("constant image yields no corners") {
  const Pyramid pyr = build_pyramid(ImageBuffer(ImageArray::Constant(120, 160, 40.0f)), 1);
  CHECK(detect_shi_tomasi(pyr).empty());
}

TEST_CASE("Shi-Tomasi scores agree with a brute-force structure tensor") {
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> u(0, 255);
  ImageArray img(40, 50);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 50; ++x) img(y, x) = u(rng);
  const Eigen::ArrayXXd scores = shi_tomasi_scores(img, 7);
  for (int y = 5; y < 35; y += 3) {
    for (int x = 5; x < 45; x += 4) {
      const double expected = brute_force_score(img, y, x, 7);
      CHECK(scores(y, x) == doctest::Approx(expected).epsilon(1e-9));
    }
  }
}

TEST_CASE("corners of a white square are detected") {
  const ImageBuffer img = white_square(160, 120, 50, 40, 40);
  const Pyramid pyr = build_pyramid(img, 1);
  DetectorOptions opts;
  opts.grid_rows = opts.grid_cols = 1;
  opts.max_per_cell = 4;
  const std::vector<Keypoint> kps = detect_shi_tomasi(pyr, opts);
  REQUIRE(kps.size() == 4);

  // The oracle: brute-force maxima of the score map in each quadrant.
  const Eigen::Vector2d quad_centers[4] = {{50, 40}, {89, 40}, {50, 79}, {89, 79}};
  for (const Eigen::Vector2d& c : quad_centers) {
    double best = -1;
    Eigen::Vector2d arg;
    for (int y = static_cast<int>(c.y()) - 6; y <= c.y() + 6; ++y) {
      for (int x = static_cast<int>(c.x()) - 6; x <= c.x() + 6; ++x) {
        const double s = brute_force_score(img.pixels, y, x, 7);
        if (s > best) {
          best = s;
          arg = {x, y};
        }
      }
    }
    double nearest = 1e9;
    for (const Keypoint& k : kps) nearest = std::min(nearest, (k.position - arg).norm());
    CHECK(nearest <= 1.0);
    CHECK((arg - c).norm() <= 3.0);  // within the window half-width
  }
}

TEST_CASE("checkerboard detections respect the per-cell cap") {
  ImageArray img(160, 160);
  for (int y = 0; y < 160; ++y)
    for (int x = 0; x < 160; ++x)
      img(y, x) = ((x / 10 + y / 10) % 2) ? 255.0f : 0.0f;
  const Pyramid pyr = build_pyramid(ImageBuffer(img), 1);
  DetectorOptions opts;
  opts.grid_rows = opts.grid_cols = 8;
  opts.max_per_cell = 2;
  opts.min_distance = 3;
  const std::vector<Keypoint> kps = detect_shi_tomasi(pyr, opts);
  CHECK(!kps.empty());
  std::vector<int> count(64, 0);
  for (const Keypoint& k : kps) {
    const int cell = static_cast<int>(k.position.y()) * 8 / 160 * 8 +
                     static_cast<int>(k.position.x()) * 8 / 160;
    CHECK(cell == k.cell);
    ++count[cell];
  }
  for (int c : count) CHECK(c <= 2);
}

TEST_CASE("image files round-trip through PGM and PNG") {
  ImageArray img(12, 17);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 17; ++x) img(y, x) = static_cast<float>((x * 13 + y * 7) % 256);
  const auto dir = std::filesystem::temp_directory_path() / "deftrack_image_io";
  std::filesystem::create_directories(dir);
  write_pgm(dir / "a.pgm", ImageBuffer(img));
  write_png(dir / "b.png", ImageBuffer(img));
  for (const char* name : {"a.pgm", "b.png"}) {
    const ImageBuffer back = read_image(dir / name);
    CHECK((back.pixels - img).abs().maxCoeff() == 0.0f);
  }
  const auto listed = list_frames(dir);
  REQUIRE(listed.size() == 2);
  CHECK(listed[0].filename() == "a.pgm");
  CHECK_THROWS(read_image(dir / "missing.png"));
  std::filesystem::remove_all(dir);
}
