#include "deftrack/image.hpp"

#include <algorithm>
#include <sstream>

namespace deftrack {

namespace {

constexpr float kBinomial[5] = {1.f / 16, 4.f / 16, 6.f / 16, 4.f / 16,
                                1.f / 16};

}  // namespace

void central_gradients(const ImageArray& image, ImageArray& gx,
                       ImageArray& gy) {
  const Eigen::Index h = image.rows(), w = image.cols();
  gx.resize(h, w);
  gy.resize(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index xm = std::max<Eigen::Index>(x - 1, 0);
      const Eigen::Index xp = std::min<Eigen::Index>(x + 1, w - 1);
      const Eigen::Index ym = std::max<Eigen::Index>(y - 1, 0);
      const Eigen::Index yp = std::min<Eigen::Index>(y + 1, h - 1);
      gx(y, x) = xp > xm ? (image(y, xp) - image(y, xm)) /
                               static_cast<float>(xp - xm)
                         : 0.f;
      gy(y, x) = yp > ym ? (image(yp, x) - image(ym, x)) /
                               static_cast<float>(yp - ym)
                         : 0.f;
    }
  }
}

ImageArray downsample(const ImageArray& image) {
  const Eigen::Index h = image.rows(), w = image.cols();
  const Eigen::Index oh = (h + 1) / 2, ow = (w + 1) / 2;
  // Horizontal pass evaluated only at even columns, then vertical at even rows.
  ImageArray tmp(h, ow);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index ox = 0; ox < ow; ++ox) {
      float acc = 0.f;
      for (int k = -2; k <= 2; ++k) {
        const Eigen::Index x = std::clamp<Eigen::Index>(2 * ox + k, 0, w - 1);
        acc += kBinomial[k + 2] * image(y, x);
      }
      tmp(y, ox) = acc;
    }
  }
  ImageArray out(oh, ow);
  for (Eigen::Index oy = 0; oy < oh; ++oy) {
    for (Eigen::Index x = 0; x < ow; ++x) {
      float acc = 0.f;
      for (int k = -2; k <= 2; ++k) {
        const Eigen::Index y = std::clamp<Eigen::Index>(2 * oy + k, 0, h - 1);
        acc += kBinomial[k + 2] * tmp(y, x);
      }
      out(oy, x) = acc;
    }
  }
  return out;
}

Pyramid build_pyramid(const ImageBuffer& image, int levels, int min_size) {
  if (levels < 1) throw ImageError("pyramid needs at least one level");
  if (image.width() <= 0 || image.height() <= 0) {
    throw ImageError("empty image");
  }
  int w = image.width(), h = image.height();
  for (int l = 1; l < levels; ++l) {
    w = (w + 1) / 2;
    h = (h + 1) / 2;
  }
  if (w < min_size || h < min_size) {
    std::ostringstream msg;
    msg << "image " << image.width() << "x" << image.height() << " too small for "
        << levels << " pyramid levels (coarsest " << w << "x" << h
        << " < " << min_size << ")";
    throw ImageError(msg.str());
  }
  Pyramid pyr;
  pyr.levels.resize(levels);
  pyr.levels[0].image = image.pixels;
  for (int l = 1; l < levels; ++l) {
    pyr.levels[l].image = downsample(pyr.levels[l - 1].image);
  }
  for (auto& level : pyr.levels) {
    central_gradients(level.image, level.grad_x, level.grad_y);
  }
  return pyr;
}

}  // namespace deftrack
