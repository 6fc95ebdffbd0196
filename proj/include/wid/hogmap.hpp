#pragma once

#include "wid/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace wid {

/// Cell grid (m rows x n cols), grouped into b blocks of t cells, k orientation bins.
struct HogParams {
  int m = 4, n = 4;
  int t = 4, b = 4;
  int k = 10;

  int length() const { return k * t * b; }
  /// Integer bin width ceil(360 / k) in degrees.
  int bin_width() const { return (360 + k - 1) / k; }

  /// Block tiling: blocks form a block_rows x block_cols grid of equal cell tiles.
  int block_rows() const;
  int block_cols() const { return b / block_rows(); }

  /// Throws ConfigError unless m*n = t*b, k >= 2 and the cells tile into b equal blocks.
  void validate() const;

  /// Defaults per conv layer: 4x4 cells in four quadrants, or 2x2 single-cell blocks from conv3 on.
  static HogParams for_layer(int layer) {
    return layer <= 2 ? HogParams{} : HogParams{2, 2, 1, 4, 10};
  }

  friend bool operator==(const HogParams&, const HogParams&) = default;
};

inline int HogParams::block_rows() const {
  // Most square block grid whose tiles divide the cell grid evenly.
  int best = -1;
  for (int br = 1; br <= b; ++br) {
    if (b % br || m % br || n % (b / br)) continue;
    if ((m / br) * (n / (b / br)) != t) continue;
    if (best < 0 || std::abs(br - b / br) < std::abs(best - b / best)) best = br;
  }
  return best;
}

inline void HogParams::validate() const {
  if (m < 1 || n < 1 || t < 1 || b < 1) fail(ErrorKind::ConfigError, "HOG grid counts must be positive");
  if (k < 2) fail(ErrorKind::ConfigError, "HOG needs at least two orientation bins");
  if (m * n != t * b) fail(ErrorKind::ConfigError, "HOG grid: m*n must equal t*b");
  if (block_rows() < 0) fail(ErrorKind::ConfigError, "HOG cells do not tile into equal blocks");
}

struct CellRect {
  int row = 0, col = 0, rows = 0, cols = 0;
};

/// Adaptive cells: ceil(H/m) x ceil(W/n), row-major, border cells clipped.
struct CellGeometry {
  int cell_rows = 0, cell_cols = 0;
  std::vector<CellRect> cells;  ///< m*n rectangles, row-major
};

inline CellGeometry cell_geometry(int height, int width, const HogParams& p) {
  if (height < p.m || width < p.n)
    fail(ErrorKind::MapTooSmall, std::to_string(height) + "x" + std::to_string(width) + " map for a " +
                                     std::to_string(p.m) + "x" + std::to_string(p.n) + " grid");
  CellGeometry g;
  g.cell_rows = (height + p.m - 1) / p.m;
  g.cell_cols = (width + p.n - 1) / p.n;
  for (int i = 0; i < p.m; ++i)
    for (int j = 0; j < p.n; ++j) {
      CellRect r{i * g.cell_rows, j * g.cell_cols, 0, 0};
      r.rows = std::max(0, std::min(g.cell_rows, height - r.row));
      r.cols = std::max(0, std::min(g.cell_cols, width - r.col));
      g.cells.push_back(r);
    }
  return g;
}

/// Per-pixel gradient magnitude and orientation (degrees in [0, 360)), y pointing down.
struct GradientField {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> magnitude, orientation;
};

/// Central differences (f[+1] - f[-1]) / 2 with replicated borders.
template <typename Derived>
GradientField gradients(const Eigen::MatrixBase<Derived>& map) {
  const Eigen::Index h = map.rows(), w = map.cols();
  GradientField g;
  g.magnitude.resize(h, w);
  g.orientation.resize(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    const Eigen::Index yu = std::max<Eigen::Index>(y - 1, 0), yd = std::min(y + 1, h - 1);
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Index xl = std::max<Eigen::Index>(x - 1, 0), xr = std::min(x + 1, w - 1);
      const double gx = 0.5 * (static_cast<double>(map(y, xr)) - static_cast<double>(map(y, xl)));
      const double gy = 0.5 * (static_cast<double>(map(yd, x)) - static_cast<double>(map(yu, x)));
      g.magnitude(y, x) = std::hypot(gx, gy);
      double deg = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (deg < 0) deg += 360.0;
      if (deg >= 360.0) deg -= 360.0;
      g.orientation(y, x) = deg;
    }
  }
  return g;
}

/// Zero-based orientation bin: ceil(deg / width) - 1, with 0 degrees folded into the first bin.
inline int orientation_bin(double deg, const HogParams& p) {
  const int l = static_cast<int>(std::ceil(deg / p.bin_width()));
  return std::clamp(l, 1, p.k) - 1;
}

/// Unnormalised cell histograms, laid out block by block (row-major blocks, row-major
/// cells within a block), k bins per cell.
template <typename Derived>
Eigen::VectorXd cell_histograms(const Eigen::MatrixBase<Derived>& map, const HogParams& p) {
  p.validate();
  const auto geo = cell_geometry(static_cast<int>(map.rows()), static_cast<int>(map.cols()), p);
  const auto grad = gradients(map);
  const int br = p.block_rows(), bc = p.block_cols();
  const int tile_r = p.m / br, tile_c = p.n / bc;
  Eigen::VectorXd hist = Eigen::VectorXd::Zero(p.length());
  for (int ci = 0; ci < p.m; ++ci)
    for (int cj = 0; cj < p.n; ++cj) {
      const int block = (ci / tile_r) * bc + cj / tile_c;
      const int within = (ci % tile_r) * tile_c + cj % tile_c;
      const int base = (block * p.t + within) * p.k;
      const CellRect& r = geo.cells[static_cast<std::size_t>(ci * p.n + cj)];
      for (int y = r.row; y < r.row + r.rows; ++y)
        for (int x = r.col; x < r.col + r.cols; ++x)
          hist(base + orientation_bin(grad.orientation(y, x), p)) += grad.magnitude(y, x);
    }
  return hist;
}

/// Unit L2 norm, or the zero vector when the input is all zero.
inline Eigen::VectorXd l2_normalized(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  return norm > 0 ? Eigen::VectorXd(v / norm) : Eigen::VectorXd::Zero(v.size());
}

/// Histogram-of-gradients descriptor of one 2-D map, length k*t*b, one global L2 normalisation.
template <typename Derived>
Eigen::VectorXd descriptor(const Eigen::MatrixBase<Derived>& map, const HogParams& p) {
  return l2_normalized(cell_histograms(map, p));
}

}  // namespace wid
