#include "deftrack/features.hpp"

#include <algorithm>
#include <tuple>

namespace deftrack {

void sobel_gradients(const ImageArray& image, Eigen::ArrayXXd& gx,
                     Eigen::ArrayXXd& gy) {
  const Eigen::Index h = image.rows(), w = image.cols();
  gx = Eigen::ArrayXXd::Zero(h, w);
  gy = Eigen::ArrayXXd::Zero(h, w);
  for (Eigen::Index y = 1; y + 1 < h; ++y) {
    for (Eigen::Index x = 1; x + 1 < w; ++x) {
      const double tl = image(y - 1, x - 1), tc = image(y - 1, x),
                   tr = image(y - 1, x + 1);
      const double ml = image(y, x - 1), mr = image(y, x + 1);
      const double bl = image(y + 1, x - 1), bc = image(y + 1, x),
                   br = image(y + 1, x + 1);
      gx(y, x) = ((tr + 2.0 * mr + br) - (tl + 2.0 * ml + bl)) / 8.0;
      gy(y, x) = ((bl + 2.0 * bc + br) - (tl + 2.0 * tc + tr)) / 8.0;
    }
  }
}

Eigen::ArrayXXd shi_tomasi_scores(const ImageArray& image, int window) {
  const Eigen::Index h = image.rows(), w = image.cols();
  Eigen::ArrayXXd gx, gy;
  sobel_gradients(image, gx, gy);
  const Eigen::ArrayXXd xx = gx * gx, xy = gx * gy, yy = gy * gy;
  const int r = window / 2;
  Eigen::ArrayXXd scores = Eigen::ArrayXXd::Zero(h, w);
  // Sobel is undefined on the outermost ring, so windows must stay inside
  // [1, dim - 2].
  for (Eigen::Index y = r + 1; y + r + 1 < h; ++y) {
    for (Eigen::Index x = r + 1; x + r + 1 < w; ++x) {
      const double a = xx.block(y - r, x - r, window, window).sum();
      const double b = xy.block(y - r, x - r, window, window).sum();
      const double c = yy.block(y - r, x - r, window, window).sum();
      scores(y, x) = min_eigenvalue(a, b, c);
    }
  }
  return scores;
}

std::vector<Keypoint> detect_shi_tomasi(const Pyramid& pyramid,
                                        const DetectorOptions& options) {
  const ImageArray& image = pyramid[0].image;
  const int h = static_cast<int>(image.rows());
  const int w = static_cast<int>(image.cols());
  const Eigen::ArrayXXd scores = shi_tomasi_scores(image, options.window);
  const double max_score = scores.maxCoeff();
  if (!(max_score > 0.0)) return {};
  const double threshold = options.min_score >= 0.0
                               ? options.min_score
                               : options.relative_min_score * max_score;

  struct Candidate {
    double score;
    int y, x;
  };
  std::vector<Candidate> candidates;
  const int border = std::max(options.border, options.window / 2 + 1);
  for (int y = std::max(border, 1); y < h - std::max(border, 1); ++y) {
    for (int x = std::max(border, 1); x < w - std::max(border, 1); ++x) {
      const double s = scores(y, x);
      if (s <= 0.0 || s < threshold) continue;
      // 3x3 non-maximum suppression; ties resolved towards the first pixel in
      // raster order.
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx == 0) continue;
          const double n = scores(y + dy, x + dx);
          const bool before = dy < 0 || (dy == 0 && dx < 0);
          if (n > s || (before && n == s)) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) candidates.push_back({s, y, x});
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              return std::tie(b.score, a.y, a.x) < std::tie(a.score, b.y, b.x);
            });

  const int rows = std::max(options.grid_rows, 1);
  const int cols = std::max(options.grid_cols, 1);
  std::vector<int> per_cell(static_cast<std::size_t>(rows * cols), 0);
  std::vector<Keypoint> out;
  const double min_dist_sq = options.min_distance * options.min_distance;
  for (const Candidate& c : candidates) {
    const int cell_row = std::min(c.y * rows / h, rows - 1);
    const int cell_col = std::min(c.x * cols / w, cols - 1);
    const int cell = cell_row * cols + cell_col;
    if (per_cell[cell] >= options.max_per_cell) continue;
    const Eigen::Vector2d p(c.x, c.y);
    const bool too_close = std::any_of(out.begin(), out.end(), [&](const Keypoint& k) {
      return (k.position - p).squaredNorm() < min_dist_sq;
    });
    if (too_close) continue;
    ++per_cell[cell];
    out.push_back({p, c.score, cell});
  }
  return out;
}

}  // namespace deftrack
