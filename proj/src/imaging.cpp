#include "wid/imaging.hpp"

#include "wid/error.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

namespace wid {

namespace {

constexpr double kLumaR = 0.299, kLumaG = 0.587, kLumaB = 0.114;

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

// Reads one ASCII header token of a PNM file, skipping whitespace and comments.
long pnm_token(std::span<const std::uint8_t> bytes, std::size_t& pos) {
  for (;;) {
    while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  long value = 0;
  std::size_t start = pos;
  while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
    value = value * 10 + (bytes[pos] - '0');
    if (value > 1'000'000) fail(ErrorKind::CorruptImage, "PGM header value out of range");
    ++pos;
  }
  if (pos == start) fail(ErrorKind::CorruptImage, "malformed PGM header");
  return value;
}

}  // namespace

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingFile, path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

GrayImage decode_pgm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5')
    fail(ErrorKind::UnsupportedFormat, "only binary PGM (P5) is supported");
  std::size_t pos = 2;
  const long width = pnm_token(bytes, pos);
  const long height = pnm_token(bytes, pos);
  const long maxval = pnm_token(bytes, pos);
  if (width < 1 || height < 1) fail(ErrorKind::CorruptImage, "PGM with empty raster");
  if (maxval != 255) fail(ErrorKind::UnsupportedFormat, "PGM maxval must be 255");
  if (pos >= bytes.size() || !is_space(bytes[pos])) fail(ErrorKind::CorruptImage, "PGM header");
  ++pos;
  const auto count = static_cast<std::size_t>(width * height);
  if (bytes.size() - pos < count) fail(ErrorKind::CorruptImage, "PGM raster truncated");
  GrayImage img(height, width);
  for (std::size_t i = 0; i < count; ++i) img.data()[i] = bytes[pos + i];
  return img;
}

GrayImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    fail(ErrorKind::UnsupportedFormat, "not a PNG stream");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorKind::CorruptImage, std::string("PNG: ") + image.message);

  const bool colour = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  const bool alpha = (image.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  image.format = colour ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB)
                        : (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY);
  const int channels = static_cast<int>(PNG_IMAGE_PIXEL_CHANNELS(image.format));
  std::vector<std::uint8_t> raw(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raw.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorKind::CorruptImage, "PNG: " + msg);
  }

  GrayImage img(image.height, image.width);
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    const std::uint8_t* px = raw.data() + i * channels;
    img.data()[i] = colour ? kLumaR * px[0] + kLumaG * px[1] + kLumaB * px[2] : px[0];
  }
  return img;
}

GrayImage load_grayscale(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, path.string());
  const auto bytes = read_file_bytes(path);
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) return decode_png(bytes);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes);
  fail(ErrorKind::UnsupportedFormat, path.string());
}

std::vector<std::uint8_t> to_bytes(const GrayImage& img, bool unit_range) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(img.size()));
  const double scale = unit_range ? 255.0 : 1.0;
  for (Eigen::Index i = 0; i < img.size(); ++i)
    out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(img.data()[i] * scale), 0L, 255L));
  return out;
}

void save_png(const std::filesystem::path& path, const GrayImage& img, bool unit_range) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.cols());
  image.height = static_cast<png_uint_32>(img.rows());
  image.format = PNG_FORMAT_GRAY;
  const auto bytes = to_bytes(img, unit_range);
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, bytes.data(), 0, nullptr))
    fail(ErrorKind::MissingFile, "cannot write " + path.string() + ": " + image.message);
}

void save_pgm(const std::filesystem::path& path, const GrayImage& img, bool unit_range) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::MissingFile, "cannot write " + path.string());
  out << "P5\n" << img.cols() << ' ' << img.rows() << "\n255\n";
  const auto bytes = to_bytes(img, unit_range);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace wid
