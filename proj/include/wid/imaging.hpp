#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace wid {

/// Row-major 2-D grid; rows are image rows (y), columns are x.
template <typename Scalar>
using Grid = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grayscale raster. Loaders return intensities in [0, 255]; after
/// normalize01 every value lies in [0, 1].
using GrayImage = Grid<double>;

/// Reads an 8-bit PNG (gray, gray+alpha, RGB, RGBA) or a binary PGM (P5).
/// Colour inputs are reduced with Rec.601 luminance weights.
GrayImage load_grayscale(const std::filesystem::path& path);

GrayImage decode_pgm(std::span<const std::uint8_t> bytes);
GrayImage decode_png(std::span<const std::uint8_t> bytes);

/// Divides by 255. Not a min-max stretch.
template <typename Derived>
GrayImage normalize01(const Eigen::MatrixBase<Derived>& img) {
  return (img.template cast<double>() / 255.0).eval();
}

/// Writes an 8-bit grayscale PNG. `unit_range` selects [0,1] input (scaled by 255)
/// versus [0,255] input; values are clamped and rounded.
void save_png(const std::filesystem::path& path, const GrayImage& img, bool unit_range = true);
void save_pgm(const std::filesystem::path& path, const GrayImage& img, bool unit_range = true);

/// Encodes to 8-bit bytes with the same clamping/rounding as the writers.
std::vector<std::uint8_t> to_bytes(const GrayImage& img, bool unit_range);

/// Bilinear lookup at continuous pixel coordinates (pixel centres on integers).
/// Samples touching pixels outside the raster read `fill`.
template <typename Derived>
double sample_bilinear(const Eigen::MatrixBase<Derived>& img, double x, double y, double fill) {
  const double fx = std::floor(x), fy = std::floor(y);
  const double ax = x - fx, ay = y - fy;
  const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
  auto at = [&](long yy, long xx) -> double {
    if (xx < 0 || yy < 0 || xx >= img.cols() || yy >= img.rows()) return fill;
    return static_cast<double>(img(yy, xx));
  };
  return (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
         ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

}  // namespace wid
