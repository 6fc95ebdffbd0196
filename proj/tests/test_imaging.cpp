#include "wid/error.hpp"
#include "wid/imaging.hpp"

#include <doctest.h>
#include <png.h>

#include <fstream>
#include <random>

using namespace wid;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "wid_test_imaging";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> pgm(int w, int h, const std::vector<std::uint8_t>& px) {
  const std::string head = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(head.begin(), head.end());
  out.insert(out.end(), px.begin(), px.end());
  return out;
}

void write_rgb_png(const fs::path& p, int w, int h, const std::vector<std::uint8_t>& rgb) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = PNG_FORMAT_RGB;
  REQUIRE(png_image_write_to_file(&img, p.string().c_str(), 0, rgb.data(), 0, nullptr));
}

ErrorKind kind_of(const auto& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no exception");
  return ErrorKind::ConfigError;
}

}  // namespace

TEST_CASE("2x2 PGM decodes as stored") {
  write_bytes(tmp("a.pgm"), pgm(2, 2, {0, 255, 128, 64}));
  const GrayImage g = load_grayscale(tmp("a.pgm"));
  REQUIRE(g.rows() == 2);
  REQUIRE(g.cols() == 2);
  CHECK(g(0, 0) == 0);
  CHECK(g(0, 1) == 255);
  CHECK(g(1, 0) == 128);
  CHECK(g(1, 1) == 64);
}

TEST_CASE("PGM header comments and non-square shapes") {
  std::string head = "P5\n# made by hand\n3 2\n255\n";
  std::vector<std::uint8_t> bytes(head.begin(), head.end());
  for (int i = 0; i < 6; ++i) bytes.push_back(static_cast<std::uint8_t>(i * 10));
  const GrayImage g = decode_pgm(bytes);
  CHECK(g.rows() == 2);
  CHECK(g.cols() == 3);
  CHECK(g(1, 2) == 50);
}

TEST_CASE("RGB PNG reduces by Rec.601 luminance") {
  write_rgb_png(tmp("rgb.png"), 3, 1, {255, 255, 255, 255, 0, 0, 0, 0, 255});
  const GrayImage g = load_grayscale(tmp("rgb.png"));
  CHECK(g(0, 0) == doctest::Approx(255).epsilon(1e-3));
  CHECK(g(0, 1) == doctest::Approx(0.299 * 255).epsilon(0.01));
  CHECK(g(0, 2) == doctest::Approx(0.114 * 255).epsilon(0.03));
}

TEST_CASE("PNG round trip keeps header dimensions and bytes") {
  std::mt19937 rng(3);
  GrayImage g(7, 13);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<double>(rng() % 256);
  save_png(tmp("rt.png"), g, false);
  const GrayImage back = load_grayscale(tmp("rt.png"));
  CHECK(back.rows() == 7);
  CHECK(back.cols() == 13);
  CHECK(back == g);
  save_pgm(tmp("rt.pgm"), g, false);
  CHECK(load_grayscale(tmp("rt.pgm")) == g);
}

TEST_CASE("normalize01 scales by 255") {
  GrayImage g(1, 3);
  g << 0, 255, 128;
  const GrayImage n = normalize01(g);
  CHECK(n(0, 0) == 0.0);
  CHECK(n(0, 1) == 1.0);
  CHECK(n(0, 2) == doctest::Approx(0.50196).epsilon(1e-4));
  CHECK(normalize01(GrayImage::Zero(4, 4)).isZero());
}

TEST_CASE("normalize01 of a rescaled normalisation is stable") {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    GrayImage g(5, 6);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = static_cast<double>(rng() % 256);
    const GrayImage once = normalize01(g);
    const GrayImage twice = normalize01((255.0 * once).eval());
    CHECK((twice - once).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(once.minCoeff() >= 0.0);
    CHECK(once.maxCoeff() <= 1.0);
  }
}

TEST_CASE("loader errors") {
  CHECK(kind_of([] { load_grayscale(tmp("nope.png")); }) == ErrorKind::MissingFile);
  write_bytes(tmp("text.bmp"), {'B', 'M', 0, 0, 0, 0});
  CHECK(kind_of([] { load_grayscale(tmp("text.bmp")); }) == ErrorKind::UnsupportedFormat);
  write_bytes(tmp("ascii.pgm"), {'P', '2', '\n', '1', ' ', '1', '\n', '2', '5', '5', '\n', '0'});
  CHECK(kind_of([] { load_grayscale(tmp("ascii.pgm")); }) == ErrorKind::UnsupportedFormat);
  write_bytes(tmp("short.pgm"), pgm(4, 4, {1, 2, 3}));
  CHECK(kind_of([] { load_grayscale(tmp("short.pgm")); }) == ErrorKind::CorruptImage);

  GrayImage g = GrayImage::Constant(8, 8, 100);
  save_png(tmp("cut.png"), g, false);
  std::ifstream in(tmp("cut.png"), std::ios::binary);
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), {}};
  bytes.resize(bytes.size() / 2);
  write_bytes(tmp("cut.png"), bytes);
  CHECK(kind_of([] { load_grayscale(tmp("cut.png")); }) == ErrorKind::CorruptImage);
}

TEST_CASE("bilinear sampling interpolates and fills outside") {
  GrayImage g(2, 2);
  g << 0, 1, 2, 3;
  CHECK(sample_bilinear(g, 0.5, 0.5, 9.0) == doctest::Approx(1.5));
  CHECK(sample_bilinear(g, 1.0, 0.0, 9.0) == doctest::Approx(1.0));
  CHECK(sample_bilinear(g, -3.0, 0.0, 9.0) == doctest::Approx(9.0));
}
