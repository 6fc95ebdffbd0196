#include "wid/keypoints.hpp"

#include "wid/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <tuple>

namespace wid {

namespace {

constexpr double kAssumedBlur = 0.5;
constexpr int kMinSide = 16;
constexpr int kMinOctaveSide = 8;
constexpr int kOrientationBins = 36;
constexpr int kMaxRefineSteps = 5;
constexpr double kOrientationPeakRatio = 0.8;

GrayImage blur_rows(const GrayImage& img, const Eigen::VectorXd& kernel) {
  const long r = (kernel.size() - 1) / 2;
  GrayImage out(img.rows(), img.cols());
  for (Eigen::Index y = 0; y < img.rows(); ++y) {
    for (Eigen::Index x = 0; x < img.cols(); ++x) {
      double acc = 0;
      for (long k = -r; k <= r; ++k) {
        const Eigen::Index xx = std::clamp<Eigen::Index>(x + k, 0, img.cols() - 1);
        acc += kernel[k + r] * img(y, xx);
      }
      out(y, x) = acc;
    }
  }
  return out;
}

GrayImage downsample(const GrayImage& img) {
  const Eigen::Index h = (img.rows() + 1) / 2, w = (img.cols() + 1) / 2;
  GrayImage out(h, w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x) out(y, x) = img(2 * y, 2 * x);
  return out;
}

bool is_extremum(const Octave& oct, int level, Eigen::Index y, Eigen::Index x) {
  const double v = oct.dogs[level](y, x);
  const bool want_max = v > 0;
  for (int l = level - 1; l <= level + 1; ++l) {
    const GrayImage& d = oct.dogs[l];
    for (Eigen::Index dy = -1; dy <= 1; ++dy) {
      for (Eigen::Index dx = -1; dx <= 1; ++dx) {
        if (l == level && dy == 0 && dx == 0) continue;
        const double n = d(y + dy, x + dx);
        if (want_max ? n >= v : n <= v) return false;
      }
    }
  }
  return true;
}

struct Refined {
  double x, y, level;  // octave grid coordinates
  double value;
  Eigen::Index ix, iy;
  int il;
};

std::optional<Refined> refine(const Octave& oct, int s, Eigen::Index x, Eigen::Index y, int level,
                              double contrast_thresh, double edge_ratio) {
  const Eigen::Index h = oct.dogs[0].rows(), w = oct.dogs[0].cols();
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  Eigen::Vector3d grad;
  for (int step = 0;; ++step) {
    if (step == kMaxRefineSteps) return std::nullopt;
    const GrayImage& prev = oct.dogs[level - 1];
    const GrayImage& cur = oct.dogs[level];
    const GrayImage& next = oct.dogs[level + 1];
    const double v = cur(y, x);
    grad << 0.5 * (cur(y, x + 1) - cur(y, x - 1)), 0.5 * (cur(y + 1, x) - cur(y - 1, x)),
        0.5 * (next(y, x) - prev(y, x));
    const double dxx = cur(y, x + 1) + cur(y, x - 1) - 2 * v;
    const double dyy = cur(y + 1, x) + cur(y - 1, x) - 2 * v;
    const double dss = next(y, x) + prev(y, x) - 2 * v;
    const double dxy = 0.25 * (cur(y + 1, x + 1) - cur(y + 1, x - 1) - cur(y - 1, x + 1) +
                               cur(y - 1, x - 1));
    const double dxs = 0.25 * (next(y, x + 1) - next(y, x - 1) - prev(y, x + 1) + prev(y, x - 1));
    const double dys = 0.25 * (next(y + 1, x) - next(y - 1, x) - prev(y + 1, x) + prev(y - 1, x));
    Eigen::Matrix3d hess;
    hess << dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss;
    const auto lu = hess.fullPivLu();
    if (!lu.isInvertible()) return std::nullopt;
    offset = -lu.solve(grad);
    if (offset.cwiseAbs().maxCoeff() < 0.5) break;
    x += std::lround(offset[0]);
    y += std::lround(offset[1]);
    level += static_cast<int>(std::lround(offset[2]));
    if (level < 1 || level > s || x < 1 || y < 1 || x >= w - 1 || y >= h - 1) return std::nullopt;
  }

  const GrayImage& cur = oct.dogs[level];
  const double value = cur(y, x) + 0.5 * grad.dot(offset);
  if (std::abs(value) < contrast_thresh) return std::nullopt;

  const double v = cur(y, x);
  const double dxx = cur(y, x + 1) + cur(y, x - 1) - 2 * v;
  const double dyy = cur(y + 1, x) + cur(y - 1, x) - 2 * v;
  const double dxy =
      0.25 * (cur(y + 1, x + 1) - cur(y + 1, x - 1) - cur(y - 1, x + 1) + cur(y - 1, x - 1));
  const double tr = dxx + dyy;
  const double det = dxx * dyy - dxy * dxy;
  if (det <= 0 || tr * tr * edge_ratio >= (edge_ratio + 1) * (edge_ratio + 1) * det)
    return std::nullopt;

  const double rx = static_cast<double>(x) + offset[0];
  const double ry = static_cast<double>(y) + offset[1];
  if (rx < 0 || ry < 0 || rx > static_cast<double>(w - 1) || ry > static_cast<double>(h - 1))
    return std::nullopt;
  return Refined{rx, ry, level + offset[2], value, x, y, level};
}

// Dominant gradient directions around a refined extremum, in degrees.
std::vector<double> orientations(const GrayImage& gauss, Eigen::Index cx, Eigen::Index cy,
                                 double octave_sigma) {
  const double win_sigma = 1.5 * octave_sigma;
  const long radius = std::lround(3 * win_sigma);
  std::array<double, kOrientationBins> hist{};
  const double inv = -1.0 / (2 * win_sigma * win_sigma);
  for (long dy = -radius; dy <= radius; ++dy) {
    const Eigen::Index y = cy + dy;
    if (y <= 0 || y >= gauss.rows() - 1) continue;
    for (long dx = -radius; dx <= radius; ++dx) {
      const Eigen::Index x = cx + dx;
      if (x <= 0 || x >= gauss.cols() - 1) continue;
      const double gx = gauss(y, x + 1) - gauss(y, x - 1);
      const double gy = gauss(y + 1, x) - gauss(y - 1, x);
      const double mag = std::hypot(gx, gy);
      if (mag == 0) continue;
      double deg = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (deg < 0) deg += 360.0;
      int bin = static_cast<int>(deg * kOrientationBins / 360.0);
      if (bin >= kOrientationBins) bin = 0;
      hist[bin] += mag * std::exp(inv * static_cast<double>(dx * dx + dy * dy));
    }
  }

  std::array<double, kOrientationBins> smooth{};
  for (int i = 0; i < kOrientationBins; ++i) {
    auto at = [&](int k) { return hist[(i + k + kOrientationBins) % kOrientationBins]; };
    smooth[i] = (at(-2) + at(2)) / 16.0 + (at(-1) + at(1)) * 4.0 / 16.0 + at(0) * 6.0 / 16.0;
  }
  const double peak = *std::max_element(smooth.begin(), smooth.end());
  std::vector<double> out;
  if (peak <= 0) return out;
  for (int i = 0; i < kOrientationBins; ++i) {
    const double l = smooth[(i + kOrientationBins - 1) % kOrientationBins];
    const double r = smooth[(i + 1) % kOrientationBins];
    const double c = smooth[i];
    if (c > l && c > r && c >= kOrientationPeakRatio * peak) {
      const double shift = 0.5 * (l - r) / (l - 2 * c + r);
      double deg = (i + 0.5 + shift) * 360.0 / kOrientationBins;
      deg = std::fmod(deg + 360.0, 360.0);
      if (deg >= 360.0) deg = 0.0;
      out.push_back(deg);
    }
  }
  return out;
}

}  // namespace

double ScaleSpace::level_sigma(double level) const {
  return sigma0 * std::exp2(level / scales_per_octave);
}

GrayImage gaussian_blur(const GrayImage& img, double sigma) {
  if (sigma <= 0) return img;
  const long r = std::max(1L, static_cast<long>(std::ceil(4 * sigma)));
  Eigen::VectorXd kernel(2 * r + 1);
  for (long k = -r; k <= r; ++k) kernel[k + r] = std::exp(-0.5 * k * k / (sigma * sigma));
  kernel /= kernel.sum();
  GrayImage tmp = blur_rows(img, kernel);
  GrayImage t = tmp.transpose();
  GrayImage out = blur_rows(t, kernel);
  return out.transpose();
}

ScaleSpace build_scale_space(const GrayImage& img, int octaves, int scales_per_octave,
                             double sigma0) {
  if (img.rows() < kMinSide || img.cols() < kMinSide)
    fail(ErrorKind::ImageTooSmall, "scale space needs both sides >= 16");
  int max_octaves = 1;
  for (Eigen::Index h = img.rows(), w = img.cols();;) {
    h = (h + 1) / 2;
    w = (w + 1) / 2;
    if (h < kMinOctaveSide || w < kMinOctaveSide) break;
    ++max_octaves;
  }
  if (octaves <= 0 || octaves > max_octaves) octaves = max_octaves;

  ScaleSpace space;
  space.scales_per_octave = scales_per_octave;
  space.sigma0 = sigma0;
  const int levels = scales_per_octave + 3;

  GrayImage base = gaussian_blur(img, std::sqrt(sigma0 * sigma0 - kAssumedBlur * kAssumedBlur));
  for (int o = 0; o < octaves; ++o) {
    Octave oct;
    oct.gaussians.reserve(levels);
    oct.gaussians.push_back(base);
    for (int i = 1; i < levels; ++i) {
      const double prev = space.level_sigma(i - 1);
      const double cur = space.level_sigma(i);
      oct.gaussians.push_back(gaussian_blur(oct.gaussians.back(), std::sqrt(cur * cur - prev * prev)));
    }
    for (int i = 0; i + 1 < levels; ++i)
      oct.dogs.push_back(oct.gaussians[i + 1] - oct.gaussians[i]);
    base = downsample(oct.gaussians[scales_per_octave]);
    space.octaves.push_back(std::move(oct));
  }
  return space;
}

std::vector<Keypoint> detect_keypoints(const ScaleSpace& space, double contrast_thresh,
                                       double edge_ratio) {
  std::vector<Keypoint> out;
  const int s = space.scales_per_octave;
  const double prefilter = 0.5 * contrast_thresh / s;
  for (std::size_t o = 0; o < space.octaves.size(); ++o) {
    const Octave& oct = space.octaves[o];
    const double spacing = std::exp2(static_cast<double>(o));
    const Eigen::Index h = oct.dogs[0].rows(), w = oct.dogs[0].cols();
    for (int level = 1; level <= s; ++level) {
      for (Eigen::Index y = 1; y + 1 < h; ++y) {
        for (Eigen::Index x = 1; x + 1 < w; ++x) {
          if (std::abs(oct.dogs[level](y, x)) <= prefilter) continue;
          if (!is_extremum(oct, level, y, x)) continue;
          auto r = refine(oct, s, x, y, level, contrast_thresh, edge_ratio);
          if (!r) continue;
          const double octave_sigma = space.level_sigma(r->level);
          for (double deg : orientations(oct.gaussians[r->il], r->ix, r->iy, octave_sigma)) {
            Keypoint kp;
            kp.x = r->x * spacing;
            kp.y = r->y * spacing;
            kp.sigma = octave_sigma * spacing;
            kp.orientation = deg;
            kp.octave = static_cast<int>(o);
            kp.response = r->value;
            out.push_back(kp);
          }
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), [](const Keypoint& a, const Keypoint& b) {
    return std::tie(a.octave, a.y, a.x, a.sigma, a.orientation) <
           std::tie(b.octave, b.y, b.x, b.sigma, b.orientation);
  });
  // Neighbouring seeds can refine onto the same extremum.
  out.erase(std::unique(out.begin(), out.end(),
                        [](const Keypoint& a, const Keypoint& b) {
                          return a.octave == b.octave && a.x == b.x && a.y == b.y &&
                                 a.sigma == b.sigma && a.orientation == b.orientation;
                        }),
            out.end());
  return out;
}

std::vector<Keypoint> detect_keypoints(const GrayImage& img01, const DetectorParams& params) {
  const auto space =
      build_scale_space(img01, params.octaves, params.scales_per_octave, params.sigma0);
  return detect_keypoints(space, params.contrast_thresh, params.edge_ratio);
}

int fragment_side(const Keypoint& kp, double eta) {
  return 2 * static_cast<int>(std::lround(eta * kp.sigma)) + 1;
}

int odd_min_side(int min_side) { return min_side % 2 == 0 ? min_side + 1 : min_side; }

std::optional<Fragment> extract_fragment(const GrayImage& img01, const Keypoint& kp, double eta,
                                         int min_side) {
  const int side = fragment_side(kp, eta);
  if (side < odd_min_side(min_side)) return std::nullopt;
  const int half = side / 2;
  const double rad = kp.orientation * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  Fragment frag;
  frag.side = side;
  frag.source = kp;
  frag.patch.resize(side, side);
  for (int v = -half; v <= half; ++v) {
    for (int u = -half; u <= half; ++u) {
      const double sx = kp.x + c * u - s * v;
      const double sy = kp.y + s * u + c * v;
      frag.patch(v + half, u + half) = sample_bilinear(img01, sx, sy, 1.0);
    }
  }
  return frag;
}

}  // namespace wid
