#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace deftrack {

/// Row-major intensity plane, indexed (row, col) = (y, x).
using ImageArray =
    Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Grayscale frame with intensities in the 0..255 range.
struct ImageBuffer {
  ImageArray pixels;
  double timestamp = 0.0;
  int frame_index = 0;

  ImageBuffer() = default;
  explicit ImageBuffer(ImageArray p, int index = 0, double stamp = 0.0)
      : pixels(std::move(p)), timestamp(stamp), frame_index(index) {}

  int width() const { return static_cast<int>(pixels.cols()); }
  int height() const { return static_cast<int>(pixels.rows()); }
};

struct PyramidLevel {
  ImageArray image;
  ImageArray grad_x;
  ImageArray grad_y;

  int width() const { return static_cast<int>(image.cols()); }
  int height() const { return static_cast<int>(image.rows()); }
};

/// Level 0 is full resolution; level L has dimensions ceil(dims / 2^L) and
/// pixel coordinates scaled by exactly 2^-L.
struct Pyramid {
  std::vector<PyramidLevel> levels;

  int num_levels() const { return static_cast<int>(levels.size()); }
  const PyramidLevel& operator[](int level) const { return levels[level]; }
};

/// Throws ImageError if the coarsest level would be smaller than min_size in
/// either dimension.
Pyramid build_pyramid(const ImageBuffer& image, int levels, int min_size = 11);

/// Central-difference gradients; one-sided at the border.
void central_gradients(const ImageArray& image, ImageArray& gx, ImageArray& gy);

/// Separable 5-tap binomial blur followed by 2x decimation.
ImageArray downsample(const ImageArray& image);

/// Bilinear interpolation at (x, y). Coordinates are clamped to the image.
template <typename Derived>
double sample_bilinear(const Eigen::DenseBase<Derived>& image, double x,
                       double y) {
  const int w = static_cast<int>(image.cols());
  const int h = static_cast<int>(image.rows());
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const int x0 = std::min(static_cast<int>(x), w - 2 < 0 ? 0 : w - 2);
  const int y0 = std::min(static_cast<int>(y), h - 2 < 0 ? 0 : h - 2);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double ax = x - x0;
  const double ay = y - y0;
  const double top = (1.0 - ax) * image(y0, x0) + ax * image(y0, x1);
  const double bottom = (1.0 - ax) * image(y1, x0) + ax * image(y1, x1);
  return (1.0 - ay) * top + ay * bottom;
}

/// Luminance conversion with weights 0.299, 0.587, 0.114.
inline float luminance(float r, float g, float b) {
  return 0.299f * r + 0.587f * g + 0.114f * b;
}

}  // namespace deftrack
