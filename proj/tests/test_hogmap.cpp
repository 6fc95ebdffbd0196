#include "wid/hogmap.hpp"

#include <doctest.h>

#include <array>
#include <random>

using namespace wid;
using Map = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace {

Map random_map(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  Map m(h, w);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

// Brute-force reference histogram: every pixel looked up in an explicit block/cell table.
Eigen::VectorXd reference_descriptor(const Map& map, int m, int n, int k, int tile_r, int tile_c) {
  const int h = static_cast<int>(map.rows()), w = static_cast<int>(map.cols());
  const int cr = (h + m - 1) / m, cc = (w + n - 1) / n;
  const int bc = n / tile_c;
  const double width = std::ceil(360.0 / k);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(m * n * k);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double gx = (map(y, std::min(x + 1, w - 1)) - map(y, std::max(x - 1, 0))) / 2;
      const double gy = (map(std::min(y + 1, h - 1), x) - map(std::max(y - 1, 0), x)) / 2;
      double deg = std::atan2(gy, gx) * 180 / std::numbers::pi;
      if (deg < 0) deg += 360;
      int bin = static_cast<int>(std::ceil(deg / width));
      if (bin == 0) bin = 1;
      const int ci = y / cr, cj = x / cc;
      const int block = (ci / tile_r) * bc + cj / tile_c;
      const int cell = (ci % tile_r) * tile_c + cj % tile_c;
      v((block * tile_r * tile_c + cell) * k + bin - 1) += std::hypot(gx, gy);
    }
  return v.norm() > 0 ? Eigen::VectorXd(v / v.norm()) : v;
}

}  // namespace

TEST_CASE("adaptive cell geometry") {
  const HogParams p;
  auto g = cell_geometry(18, 18, p);
  CHECK(g.cell_rows == 5);
  CHECK(g.cell_cols == 5);
  CHECK(g.cells.back().rows == 3);
  CHECK(g.cells.back().cols == 3);
  CHECK(g.cells[3].col == 15);

  g = cell_geometry(16, 16, p);
  for (const auto& c : g.cells) {
    CHECK(c.rows == 4);
    CHECK(c.cols == 4);
  }
  g = cell_geometry(4, 4, p);
  CHECK(g.cell_rows == 1);
  CHECK(g.cells[15].row == 3);

  g = cell_geometry(17, 17, p);
  CHECK(g.cell_rows == 5);
  CHECK(g.cells.back().rows == 2);

  // Cells tile the map exactly once.
  for (int h : {4, 5, 9, 16, 17, 18, 25, 33}) {
    g = cell_geometry(h, h + 3, p);
    int area = 0;
    for (const auto& c : g.cells) area += c.rows * c.cols;
    CHECK(area == h * (h + 3));
  }
  CHECK_THROWS_AS(cell_geometry(3, 8, p), Error);
}

TEST_CASE("analytic gradients") {
  Map ramp(6, 7), rise(6, 7);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 7; ++x) {
      ramp(y, x) = x;
      rise(y, x) = y;
    }
  const auto gx = gradients(ramp);
  const auto gy = gradients(rise);
  CHECK(gx.magnitude(3, 3) == doctest::Approx(1.0));
  CHECK(gx.orientation(3, 3) == doctest::Approx(0.0));
  CHECK(gy.magnitude(3, 3) == doctest::Approx(1.0));
  CHECK(gy.orientation(3, 3) == doctest::Approx(90.0));
  CHECK(gradients(Map::Constant(5, 5, 2.0)).magnitude.isZero());
  const auto gneg = gradients((-ramp).eval());
  CHECK(gneg.orientation(3, 3) == doctest::Approx(180.0));
}

TEST_CASE("orientation bins") {
  const HogParams p;
  CHECK(p.bin_width() == 36);
  CHECK(orientation_bin(90.0, p) == 2);  // third bin
  CHECK(orientation_bin(0.0, p) == 0);
  CHECK(orientation_bin(36.0, p) == 0);
  CHECK(orientation_bin(36.5, p) == 1);
  CHECK(orientation_bin(359.9, p) == 9);
  HogParams p7 = p;
  p7.k = 7;
  CHECK(p7.bin_width() == 52);
  CHECK(orientation_bin(359.9, p7) == 6);
}

TEST_CASE("descriptor length depends only on k, t, b") {
  for (int side : {4, 9, 17, 28}) {
    CHECK(descriptor(random_map(side, side + 1, side), HogParams{}).size() == 160);
    CHECK(descriptor(random_map(side, side, side), HogParams::for_layer(3)).size() == 40);
  }
  HogParams p{4, 4, 4, 4, 6};
  CHECK(descriptor(random_map(12, 12, 1), p).size() == 96);
}

TEST_CASE("constant map gives the zero vector") {
  CHECK(descriptor(Map::Constant(10, 10, 0.3), HogParams{}).isZero());
}

TEST_CASE("descriptor matches a brute-force reference") {
  for (std::uint64_t s = 0; s < 8; ++s) {
    const int h = 4 + static_cast<int>(s * 3), w = 5 + static_cast<int>(s * 2);
    const Map map = random_map(h, w, s);
    CHECK((descriptor(map, HogParams{}) - reference_descriptor(map, 4, 4, 10, 2, 2)).norm() < 1e-12);
    CHECK((descriptor(map, HogParams::for_layer(3)) - reference_descriptor(map, 2, 2, 10, 1, 1)).norm() <
          1e-12);
  }
}

TEST_CASE("a single gradient direction lands in the expected cell and bin") {
  // A vertical step inside the top-left cell only: orientation 0, block 0, cell 0, bin 0.
  Map m = Map::Zero(16, 16);
  m.block(0, 2, 4, 14).setOnes();
  m.block(4, 0, 12, 16).setConstant(0.5);
  const HogParams p;
  const auto hist = cell_histograms(m, p);
  CHECK(hist(0) > 0);
}

TEST_CASE("property: positive scaling invariance, unit norm, non-negative entries") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const int h = 4 + static_cast<int>(rng() % 30), w = 4 + static_cast<int>(rng() % 30);
    const Map map = random_map(h, w, rng());
    const double c = std::exp(std::uniform_real_distribution<double>(-5, 5)(rng));
    const auto d = descriptor(map, HogParams{});
    const auto dc = descriptor((c * map).eval(), HogParams{});
    CHECK((d - dc).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(d.norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cell_histograms(map, HogParams{}).minCoeff() >= 0.0);
  }
}

TEST_CASE("property: permuting framed blocks permutes descriptor segments") {
  // Each 8x8 quadrant keeps a zero frame so no gradient crosses a block boundary.
  Map quads[4];
  for (int q = 0; q < 4; ++q) {
    quads[q] = Map::Zero(8, 8);
    quads[q].block(1, 1, 6, 6) = random_map(6, 6, 40 + q);
  }
  auto assemble = [&](const std::array<int, 4>& order) {
    Map m(16, 16);
    for (int i = 0; i < 4; ++i) m.block((i / 2) * 8, (i % 2) * 8, 8, 8) = quads[order[i]];
    return m;
  };
  const std::array<int, 4> perm{2, 0, 3, 1};
  const auto base = descriptor(assemble({0, 1, 2, 3}), HogParams{});
  const auto moved = descriptor(assemble(perm), HogParams{});
  for (int i = 0; i < 4; ++i)
    CHECK((moved.segment(i * 40, 40) - base.segment(perm[i] * 40, 40)).norm() < 1e-12);
}

TEST_CASE("parameter validation") {
  CHECK_THROWS_AS((HogParams{4, 4, 4, 3, 10}.validate()), Error);
  CHECK_THROWS_AS((HogParams{4, 4, 4, 4, 1}.validate()), Error);
  CHECK_NOTHROW(HogParams{}.validate());
  CHECK(HogParams{}.block_rows() == 2);
  CHECK(HogParams::for_layer(3).block_rows() == 2);
  CHECK((HogParams{4, 4, 16, 1, 10}.block_rows()) == 1);
}
