#pragma once

#include "wid/imaging.hpp"

#include <optional>
#include <vector>

namespace wid {

/// A difference-of-Gaussian extremum in source-image coordinates.
struct Keypoint {
  double x = 0, y = 0;       ///< sub-pixel position in the source image
  double sigma = 0;          ///< absolute scale in source pixels
  double orientation = 0;    ///< degrees in [0, 360)
  int octave = 0;
  double response = 0;       ///< interpolated DoG value at the extremum
};

struct Octave {
  std::vector<GrayImage> gaussians;  ///< scales_per_octave + 3 levels
  std::vector<GrayImage> dogs;       ///< scales_per_octave + 2 adjacent differences
};

struct ScaleSpace {
  std::vector<Octave> octaves;
  int scales_per_octave = 3;
  double sigma0 = 1.6;

  /// Scale of level `level` relative to its octave's pixel grid.
  double level_sigma(double level) const;
};

struct DetectorParams {
  int octaves = 0;  ///< 0 picks the largest count whose coarsest octave is still >= 8x8
  int scales_per_octave = 3;
  double sigma0 = 1.6;
  double contrast_thresh = 0.03;
  double edge_ratio = 10.0;
};

/// Gaussian pyramid plus DoG stacks. Throws ImageTooSmall if either side < 16.
/// `octaves` is clamped so the coarsest octave keeps both sides >= 8.
ScaleSpace build_scale_space(const GrayImage& img, int octaves, int scales_per_octave, double sigma0);

/// Separable Gaussian blur with replicated borders (radius ceil(4 sigma)).
GrayImage gaussian_blur(const GrayImage& img, double sigma);

/// 3x3x3 DoG extrema with quadratic refinement, contrast and edge rejection, and
/// 36-bin orientation assignment. Output sorted by (octave, y, x, sigma, orientation).
std::vector<Keypoint> detect_keypoints(const ScaleSpace& space, double contrast_thresh,
                                       double edge_ratio);

std::vector<Keypoint> detect_keypoints(const GrayImage& img01, const DetectorParams& params = {});

struct Fragment {
  GrayImage patch;  ///< square, values in [0, 1]
  int side = 0;
  Keypoint source;
};

/// Side length used for a keypoint: 2*round(eta*sigma)+1.
int fragment_side(const Keypoint& kp, double eta);

/// Smallest odd side >= min_side.
int odd_min_side(int min_side);

/// Orientation-normalised square patch around `kp`; nullopt when the side would be
/// below odd_min_side(min_side). Out-of-bounds samples read white (1.0).
std::optional<Fragment> extract_fragment(const GrayImage& img01, const Keypoint& kp, double eta,
                                         int min_side);

}  // namespace wid
