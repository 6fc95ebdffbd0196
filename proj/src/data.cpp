#include "wid/data.hpp"

#include "wid/container.hpp"
#include "wid/error.hpp"
#include "wid/keypoints.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

namespace wid {

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, path.string());
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) fail(ErrorKind::MissingFile, path.string());
  std::vector<std::uint8_t> out;
  std::array<std::uint8_t, 1 << 16> buf{};
  for (;;) {
    const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
    if (n < 0) {
      gzclose(f);
      fail(ErrorKind::TruncatedFile, "corrupt compressed stream in " + path.string());
    }
    if (n == 0) break;
    out.insert(out.end(), buf.begin(), buf.begin() + n);
  }
  gzclose(f);
  return out;
}

std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t at) {
  if (at + 4 > b.size()) fail(ErrorKind::TruncatedFile, "IDX header");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::MissingFile, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

IdxImages read_idx_images(const std::filesystem::path& path) {
  const auto b = read_maybe_gzip(path);
  if (be32(b, 0) != kIdxImagesMagic) fail(ErrorKind::BadMagic, path.string());
  IdxImages img;
  img.count = static_cast<int>(be32(b, 4));
  img.rows = static_cast<int>(be32(b, 8));
  img.cols = static_cast<int>(be32(b, 12));
  const std::size_t n = static_cast<std::size_t>(img.count) * img.rows * img.cols;
  if (b.size() < 16 + n) fail(ErrorKind::TruncatedFile, path.string());
  img.bytes.assign(b.begin() + 16, b.begin() + 16 + static_cast<std::ptrdiff_t>(n));
  return img;
}

std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path) {
  const auto b = read_maybe_gzip(path);
  if (be32(b, 0) != kIdxLabelsMagic) fail(ErrorKind::BadMagic, path.string());
  const std::size_t n = be32(b, 4);
  if (b.size() < 8 + n) fail(ErrorKind::TruncatedFile, path.string());
  return {b.begin() + 8, b.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

void write_idx_images(const std::filesystem::path& path, const IdxImages& images) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxImagesMagic);
  put_be32(out, static_cast<std::uint32_t>(images.count));
  put_be32(out, static_cast<std::uint32_t>(images.rows));
  put_be32(out, static_cast<std::uint32_t>(images.cols));
  out.insert(out.end(), images.bytes.begin(), images.bytes.end());
  write_bytes(path, out);
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  put_be32(out, kIdxLabelsMagic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  write_bytes(path, out);
}

LabeledImages load_emnist(const std::filesystem::path& images_path,
                          const std::filesystem::path& labels_path, bool letters_only,
                          bool transpose) {
  const IdxImages raw = read_idx_images(images_path);
  const auto labels = read_idx_labels(labels_path);
  if (static_cast<std::size_t>(raw.count) != labels.size())
    fail(ErrorKind::CountMismatch, std::to_string(raw.count) + " images vs " +
                                       std::to_string(labels.size()) + " labels");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= 1 && labels[i] <= 26)
      keep.push_back(i);
    else if (!letters_only)
      fail(ErrorKind::LabelOutOfRange, "label " + std::to_string(labels[i]) + " is not a letter");
  }
  LabeledImages set;
  set.rows = transpose ? raw.cols : raw.rows;
  set.cols = transpose ? raw.rows : raw.cols;
  const int px = raw.rows * raw.cols;
  set.pixels.resize(static_cast<Eigen::Index>(keep.size()), px);
  set.labels.resize(keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    const std::uint8_t* src = raw.bytes.data() + keep[k] * px;
    for (int r = 0; r < raw.rows; ++r) {
      for (int c = 0; c < raw.cols; ++c) {
        const int dst = transpose ? c * raw.rows + r : r * raw.cols + c;
        set.pixels(static_cast<Eigen::Index>(k), dst) = static_cast<float>(src[r * raw.cols + c]) / 255.0f;
      }
    }
    set.labels[k] = labels[keep[k]] - 1;
  }
  return set;
}

LabeledImages take(const LabeledImages& set, std::size_t n) {
  n = std::min(n, set.size());
  LabeledImages out;
  out.rows = set.rows;
  out.cols = set.cols;
  out.pixels = set.pixels.topRows(static_cast<Eigen::Index>(n));
  out.labels.assign(set.labels.begin(), set.labels.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

std::string image_digest(const LabeledImages& set, std::size_t n) {
  n = std::min(n, set.size());
  std::vector<std::uint8_t> bytes;
  for (std::size_t i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < set.pixels.cols(); ++j)
      bytes.push_back(static_cast<std::uint8_t>(
          std::lround(std::clamp(set.pixels(static_cast<Eigen::Index>(i), j), 0.0f, 1.0f) * 255.0f)));
  return sha256_hex(bytes);
}

GrayImage image_at(const LabeledImages& set, std::size_t index) {
  GrayImage g(set.rows, set.cols);
  for (Eigen::Index p = 0; p < g.size(); ++p)
    g.data()[p] = set.pixels(static_cast<Eigen::Index>(index), p);
  return g;
}

// ---------------------------------------------------------------------------
// Stroke font

namespace {

using Point = Eigen::Vector2d;
using Stroke = std::vector<Point>;

void arc(Stroke& s, double cx, double cy, double rx, double ry, double a0, double a1, int n = 10) {
  for (int i = 0; i <= n; ++i) {
    const double a = (a0 + (a1 - a0) * i / n) * std::numbers::pi / 180.0;
    s.emplace_back(cx + rx * std::cos(a), cy + ry * std::sin(a));
  }
}

Stroke line(std::initializer_list<std::pair<double, double>> pts) {
  Stroke s;
  for (auto [x, y] : pts) s.emplace_back(x, y);
  return s;
}

// Upper-case letters in a unit box, x right, y down.
std::vector<Stroke> letter_strokes(int cls) {
  switch (cls) {
    case 0: return {line({{0, 1}, {0.5, 0}, {1, 1}}), line({{0.22, 0.6}, {0.78, 0.6}})};
    case 1: {
      Stroke top = line({{0, 0}, {0.55, 0}});
      arc(top, 0.55, 0.25, 0.32, 0.25, -90, 90);
      top.emplace_back(0, 0.5);
      Stroke bottom = line({{0, 0.5}, {0.6, 0.5}});
      arc(bottom, 0.6, 0.75, 0.38, 0.25, -90, 90);
      bottom.emplace_back(0, 1);
      return {line({{0, 0}, {0, 1}}), top, bottom};
    }
    case 2: {
      Stroke s;
      arc(s, 0.55, 0.5, 0.45, 0.5, -40, -320, 16);
      return {s};
    }
    case 3: {
      Stroke s = line({{0, 0}, {0.4, 0}});
      arc(s, 0.4, 0.5, 0.6, 0.5, -90, 90, 14);
      s.emplace_back(0, 1);
      return {line({{0, 0}, {0, 1}}), s};
    }
    case 4: return {line({{1, 0}, {0, 0}, {0, 1}, {1, 1}}), line({{0, 0.5}, {0.75, 0.5}})};
    case 5: return {line({{1, 0}, {0, 0}, {0, 1}}), line({{0, 0.5}, {0.75, 0.5}})};
    case 6: {
      Stroke s;
      arc(s, 0.55, 0.5, 0.45, 0.5, -40, -320, 16);
      s.emplace_back(1.0, 0.55);
      s.emplace_back(0.6, 0.55);
      return {s};
    }
    case 7: return {line({{0, 0}, {0, 1}}), line({{1, 0}, {1, 1}}), line({{0, 0.5}, {1, 0.5}})};
    case 8: return {line({{0.5, 0}, {0.5, 1}}), line({{0.2, 0}, {0.8, 0}}), line({{0.2, 1}, {0.8, 1}})};
    case 9: {
      Stroke s = line({{0.8, 0}, {0.8, 0.7}});
      arc(s, 0.5, 0.7, 0.3, 0.3, 0, 180, 10);
      return {line({{0.35, 0}, {1, 0}}), s};
    }
    case 10: return {line({{0, 0}, {0, 1}}), line({{1, 0}, {0, 0.6}}), line({{0.3, 0.42}, {1, 1}})};
    case 11: return {line({{0, 0}, {0, 1}, {0.9, 1}})};
    case 12: return {line({{0, 1}, {0, 0}, {0.5, 0.6}, {1, 0}, {1, 1}})};
    case 13: return {line({{0, 1}, {0, 0}, {1, 1}, {1, 0}})};
    case 14: {
      Stroke s;
      arc(s, 0.5, 0.5, 0.5, 0.5, 0, 360, 20);
      return {s};
    }
    case 15: {
      Stroke s = line({{0, 1}, {0, 0}, {0.6, 0}});
      arc(s, 0.6, 0.27, 0.35, 0.27, -90, 90);
      s.emplace_back(0, 0.54);
      return {s};
    }
    case 16: {
      Stroke s;
      arc(s, 0.5, 0.5, 0.5, 0.5, 0, 360, 20);
      return {s, line({{0.6, 0.7}, {1, 1.05}})};
    }
    case 17: {
      Stroke s = line({{0, 1}, {0, 0}, {0.6, 0}});
      arc(s, 0.6, 0.27, 0.35, 0.27, -90, 90);
      s.emplace_back(0, 0.54);
      return {s, line({{0.4, 0.54}, {1, 1}})};
    }
    case 18: {
      Stroke s;
      arc(s, 0.5, 0.25, 0.42, 0.25, -20, -270, 12);
      arc(s, 0.5, 0.75, 0.45, 0.25, -90, 160, 12);
      return {s};
    }
    case 19: return {line({{0, 0}, {1, 0}}), line({{0.5, 0}, {0.5, 1}})};
    case 20: {
      Stroke s = line({{0, 0}, {0, 0.6}});
      arc(s, 0.5, 0.6, 0.5, 0.4, 180, 0, 12);
      s.emplace_back(1, 0);
      return {s};
    }
    case 21: return {line({{0, 0}, {0.5, 1}, {1, 0}})};
    case 22: return {line({{0, 0}, {0.25, 1}, {0.5, 0.35}, {0.75, 1}, {1, 0}})};
    case 23: return {line({{0, 0}, {1, 1}}), line({{1, 0}, {0, 1}})};
    case 24: return {line({{0, 0}, {0.5, 0.5}, {1, 0}}), line({{0.5, 0.5}, {0.5, 1}})};
    case 25: return {line({{0, 0}, {1, 0}, {0, 1}, {1, 1}})};
    default: fail(ErrorKind::LabelOutOfRange, "letter class " + std::to_string(cls));
  }
}

double segment_distance(const Point& p, const Point& a, const Point& b) {
  const Point ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

}  // namespace

GrayImage render_glyph(int cls, std::uint64_t seed, const GlyphOptions& o) {
  auto strokes = letter_strokes(cls);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0, o.point_jitter);
  std::uniform_real_distribution<double> unit(-1, 1);

  const double rot = o.rotation_deg * unit(rng) * std::numbers::pi / 180.0;
  const double shear = o.shear * unit(rng);
  const double sx = 1 + o.scale_jitter * unit(rng), sy = 1 + o.scale_jitter * unit(rng);
  const double half_width =
      o.min_thickness + (o.max_thickness - o.min_thickness) * 0.5 * (1 + unit(rng));
  Eigen::Matrix2d a;
  a << std::cos(rot), -std::sin(rot), std::sin(rot), std::cos(rot);
  Eigen::Matrix2d sh;
  sh << 1, shear, 0, 1;
  const Eigen::Matrix2d m = a * sh * Eigen::Vector2d(sx, sy).asDiagonal();

  // Smooth random displacement field (a few low-frequency waves) bends strokes
  // without making them jagged; segments are subdivided so straight lines bend too.
  std::array<Eigen::Vector3d, 3> waves;  // (freq_x, freq_y, phase)
  std::array<Point, 3> amps;
  for (int i = 0; i < 3; ++i) {
    waves[i] = Eigen::Vector3d(2 + 2 * unit(rng), 2 + 2 * unit(rng), std::numbers::pi * unit(rng));
    amps[i] = Point(jitter(rng), jitter(rng));
  }
  Point lo(1e9, 1e9), hi(-1e9, -1e9);
  for (auto& s : strokes) {
    Stroke fine;
    for (std::size_t i = 0; i + 1 < s.size(); ++i)
      for (int k = 0; k < 4; ++k) fine.push_back(s[i] + (s[i + 1] - s[i]) * (k / 4.0));
    fine.push_back(s.back());
    s = std::move(fine);
    for (auto& p : s) {
      Point d = Point::Zero();
      for (int i = 0; i < 3; ++i)
        d += amps[i] * std::sin(waves[i][0] * p.x() + waves[i][1] * p.y() + waves[i][2]);
      p = m * (p + d - Point(0.5, 0.5));
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  }
  // Fit into the central 20x20 box keeping aspect ratio, as EMNIST does.
  const double box = 20.0 - 2 * half_width;
  const double scale = box / std::max({hi.x() - lo.x(), hi.y() - lo.y(), 1e-6});
  const Point centre = 0.5 * (lo + hi);
  for (auto& s : strokes)
    for (auto& p : s) p = (p - centre) * scale + Point(13.5, 13.5);

  GrayImage img = GrayImage::Zero(28, 28);
  for (int y = 0; y < 28; ++y) {
    for (int x = 0; x < 28; ++x) {
      const Point p(x, y);
      double d = 1e9;
      for (const auto& s : strokes)
        for (std::size_t i = 0; i + 1 < s.size(); ++i) d = std::min(d, segment_distance(p, s[i], s[i + 1]));
      img(y, x) = std::clamp(half_width + 0.5 - d, 0.0, 1.0);
    }
  }
  img = gaussian_blur(img, 0.5);
  return (img * 255.0).cwiseMin(255.0);
}

LabeledImages generate_glyph_set(int per_class, std::uint64_t seed, const GlyphOptions& options) {
  LabeledImages set;
  set.pixels.resize(static_cast<Eigen::Index>(per_class) * 26, 28 * 28);
  set.labels.resize(static_cast<std::size_t>(per_class) * 26);
  std::mt19937_64 rng(seed);
  for (int i = 0; i < per_class; ++i) {
    for (int cls = 0; cls < 26; ++cls) {
      const Eigen::Index row = static_cast<Eigen::Index>(i) * 26 + cls;
      const GrayImage g = render_glyph(cls, rng(), options);
      for (Eigen::Index p = 0; p < g.size(); ++p)
        set.pixels(row, p) = static_cast<float>(std::round(g.data()[p]) / 255.0);
      set.labels[static_cast<std::size_t>(row)] = cls;
    }
  }
  return set;
}

void write_emnist_layout(const LabeledImages& set, const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path) {
  IdxImages raw;
  raw.count = static_cast<int>(set.size());
  raw.rows = set.cols;  // stored transposed
  raw.cols = set.rows;
  raw.bytes.resize(set.size() * set.rows * set.cols);
  std::vector<std::uint8_t> labels(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (int r = 0; r < set.rows; ++r)
      for (int c = 0; c < set.cols; ++c)
        raw.bytes[i * set.rows * set.cols + c * set.rows + r] = static_cast<std::uint8_t>(std::lround(
            std::clamp(set.pixels(static_cast<Eigen::Index>(i), r * set.cols + c), 0.0f, 1.0f) * 255.0f));
    labels[i] = static_cast<std::uint8_t>(set.labels[i] + 1);
  }
  write_idx_images(images_path, raw);
  write_idx_labels(labels_path, labels);
}

// ---------------------------------------------------------------------------
// Corpus

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Validation: return "validation";
    case Split::Test: return "test";
    case Split::Unassigned: return "auto";
  }
  return "auto";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::Train;
  if (text == "validation" || text == "val") return Split::Validation;
  if (text == "test") return Split::Test;
  if (text.empty() || text == "auto") return Split::Unassigned;
  fail(ErrorKind::ConfigError, "unknown split '" + text + "'");
}

std::vector<const CorpusEntry*> WordCorpus::select(Split split) const {
  std::vector<const CorpusEntry*> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(&e);
  return out;
}

int WordCorpus::writer_index(const std::string& writer) const {
  const auto it = std::lower_bound(writers.begin(), writers.end(), writer);
  return it != writers.end() && *it == writer ? static_cast<int>(it - writers.begin()) : -1;
}

void apply_page_protocol(std::vector<CorpusEntry>& entries, std::uint64_t seed) {
  std::map<std::string, std::map<std::string, std::vector<CorpusEntry*>>> by_writer;
  for (auto& e : entries)
    if (e.split == Split::Unassigned) by_writer[e.writer][e.page].push_back(&e);
  std::mt19937_64 rng(seed);
  std::vector<CorpusEntry*> dropped;
  for (auto& [writer, pages] : by_writer) {
    if (pages.size() >= 2) {
      std::vector<std::string> ids;
      for (const auto& [id, _] : pages) ids.push_back(id);
      std::shuffle(ids.begin(), ids.end(), rng);
      for (auto& [id, words] : pages) {
        const Split s = id == ids[0] ? Split::Train : id == ids[1] ? Split::Test : Split::Unassigned;
        for (auto* w : words) w->split = s;
      }
    } else {
      auto& words = pages.begin()->second;
      std::sort(words.begin(), words.end(),
                [](const CorpusEntry* a, const CorpusEntry* b) { return a->path < b->path; });
      const std::size_t train = (words.size() + 1) / 2;
      for (std::size_t i = 0; i < words.size(); ++i)
        words[i]->split = i < train ? Split::Train : Split::Test;
    }
  }
  std::erase_if(entries, [](const CorpusEntry& e) { return e.split == Split::Unassigned; });
}

WordCorpus finalize_corpus(std::vector<CorpusEntry> entries, bool check_files) {
  if (entries.empty()) fail(ErrorKind::EmptyDataset, "corpus has no rows");
  std::sort(entries.begin(), entries.end(), [](const CorpusEntry& a, const CorpusEntry& b) {
    return std::tie(a.writer, a.page, a.path) < std::tie(b.writer, b.page, b.path);
  });
  std::set<std::filesystem::path> paths;
  std::map<std::string, std::set<Split>> splits;
  for (const auto& e : entries) {
    if (e.writer.empty() || e.page.empty()) fail(ErrorKind::ConfigError, "empty writer or page id");
    if (e.split == Split::Unassigned) fail(ErrorKind::ConfigError, "unassigned split for " + e.path.string());
    if (!paths.insert(e.path).second) fail(ErrorKind::DuplicateRow, e.path.string());
    if (check_files && !std::filesystem::exists(e.path)) fail(ErrorKind::MissingImage, e.path.string());
    splits[e.writer].insert(e.split);
  }
  WordCorpus c;
  for (const auto& [writer, s] : splits) {
    if (!s.contains(Split::Train) || !s.contains(Split::Test))
      fail(ErrorKind::WriterWithoutTest, "writer " + writer + " lacks a train or test split");
    c.writers.push_back(writer);
  }
  c.entries = std::move(entries);
  return c;
}

WordCorpus load_corpus(const std::filesystem::path& manifest_path, std::uint64_t protocol_seed) {
  std::ifstream in(manifest_path);
  if (!in) fail(ErrorKind::MissingFile, manifest_path.string());
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::EmptyDataset, "empty manifest");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "writer_id,page_id,split,word_path")
    fail(ErrorKind::ConfigError, "manifest header must be writer_id,page_id,split,word_path");
  const auto base = manifest_path.parent_path();
  std::vector<CorpusEntry> entries;
  bool needs_protocol = false;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    if (fields.size() != 4) fail(ErrorKind::ConfigError, "manifest line " + std::to_string(lineno));
    CorpusEntry e;
    e.writer = fields[0];
    e.page = fields[1];
    e.split = parse_split(fields[2]);
    e.path = std::filesystem::path(fields[3]);
    if (e.path.is_relative()) e.path = base / e.path;
    needs_protocol |= e.split == Split::Unassigned;
    entries.push_back(std::move(e));
  }
  if (needs_protocol) apply_page_protocol(entries, protocol_seed);
  return finalize_corpus(std::move(entries));
}

void write_manifest(const std::filesystem::path& manifest_path, const WordCorpus& corpus) {
  std::ofstream out(manifest_path);
  if (!out) fail(ErrorKind::MissingFile, "cannot write " + manifest_path.string());
  const auto base = manifest_path.parent_path();
  out << "writer_id,page_id,split,word_path\n";
  for (const auto& e : corpus.entries)
    out << e.writer << ',' << e.page << ',' << to_string(e.split) << ','
        << std::filesystem::proximate(e.path, base).generic_string() << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic writers

SyntheticStyle random_style(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  SyntheticStyle s;
  s.slant_deg = -15 + 30 * u(rng);
  s.thickness = 2 * u(rng);
  s.scale_jitter = 0.1 * u(rng);
  s.baseline_amp = 2 * u(rng);
  s.baseline_period = 25 + 40 * u(rng);
  s.spacing = 3 * u(rng) - 1;
  s.glyph_scale = 0.85 + 0.3 * u(rng);
  s.glyph_seed = rng();
  return s;
}

std::vector<std::vector<std::size_t>> allograph_pool(const LabeledImages& glyphs,
                                                     std::uint64_t glyph_seed, int pool) {
  std::vector<std::vector<std::size_t>> by_class(26);
  for (std::size_t i = 0; i < glyphs.size(); ++i)
    if (glyphs.labels[i] >= 0 && glyphs.labels[i] < 26) by_class[glyphs.labels[i]].push_back(i);
  std::mt19937_64 rng(glyph_seed);
  std::vector<std::vector<std::size_t>> out(26);
  for (int c = 0; c < 26; ++c) {
    if (static_cast<int>(by_class[c].size()) < pool)
      fail(ErrorKind::InsufficientGlyphs, "letter " + std::string(1, static_cast<char>('A' + c)));
    std::sample(by_class[c].begin(), by_class[c].end(), std::back_inserter(out[c]), pool, rng);
  }
  return out;
}

namespace {

// Ink mask of a stored glyph, cropped to its bounding box.
GrayImage cropped_ink(const LabeledImages& glyphs, std::size_t index) {
  const GrayImage g = image_at(glyphs, index);
  Eigen::Index top = g.rows(), bottom = -1, left = g.cols(), right = -1;
  for (Eigen::Index y = 0; y < g.rows(); ++y)
    for (Eigen::Index x = 0; x < g.cols(); ++x)
      if (g(y, x) > 0.05) {
        top = std::min(top, y);
        bottom = std::max(bottom, y);
        left = std::min(left, x);
        right = std::max(right, x);
      }
  if (bottom < 0) return GrayImage::Zero(1, 1);
  return g.block(top, left, bottom - top + 1, right - left + 1);
}

GrayImage resize_bilinear(const GrayImage& src, Eigen::Index h, Eigen::Index w) {
  GrayImage out(h, w);
  const double fy = static_cast<double>(src.rows()) / static_cast<double>(h);
  const double fx = static_cast<double>(src.cols()) / static_cast<double>(w);
  for (Eigen::Index y = 0; y < h; ++y)
    for (Eigen::Index x = 0; x < w; ++x)
      out(y, x) = sample_bilinear(src, (static_cast<double>(x) + 0.5) * fx - 0.5,
                                  (static_cast<double>(y) + 0.5) * fy - 0.5, 0.0);
  return out;
}

GrayImage dilate_disc(const GrayImage& ink, int radius) {
  if (radius <= 0) return ink;
  GrayImage out = GrayImage::Zero(ink.rows() + 2 * radius, ink.cols() + 2 * radius);
  for (Eigen::Index y = 0; y < out.rows(); ++y) {
    for (Eigen::Index x = 0; x < out.cols(); ++x) {
      double m = 0;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx * dx + dy * dy > radius * radius) continue;
          const Eigen::Index sy = y - radius + dy, sx = x - radius + dx;
          if (sy < 0 || sx < 0 || sy >= ink.rows() || sx >= ink.cols()) continue;
          m = std::max(m, ink(sy, sx));
        }
      out(y, x) = m;
    }
  }
  return out;
}

// Fractional radius blends the two neighbouring integer dilations.
GrayImage thicken(const GrayImage& ink, double radius) {
  const int lo = static_cast<int>(std::floor(radius));
  const double frac = radius - lo;
  GrayImage a = dilate_disc(ink, lo);
  if (frac < 1e-9) {
    GrayImage padded = GrayImage::Zero(ink.rows() + 2 * (lo + 1), ink.cols() + 2 * (lo + 1));
    padded.block(1, 1, a.rows(), a.cols()) = a;
    return padded;
  }
  GrayImage b = dilate_disc(ink, lo + 1);
  GrayImage a_pad = GrayImage::Zero(b.rows(), b.cols());
  a_pad.block(1, 1, a.rows(), a.cols()) = a;
  return (1 - frac) * a_pad + frac * b;
}

}  // namespace

GrayImage render_word(const std::vector<int>& letters, const SyntheticStyle& style,
                      const LabeledImages& glyphs,
                      const std::vector<std::vector<std::size_t>>& pool, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  const double phase = std::numbers::pi * (1 + u(rng));

  std::vector<GrayImage> parts;
  for (int letter : letters) {
    const auto& choices = pool.at(static_cast<std::size_t>(letter));
    const std::size_t pick = choices[std::uniform_int_distribution<std::size_t>(0, choices.size() - 1)(rng)];
    GrayImage ink = cropped_ink(glyphs, pick);
    const double f = style.glyph_scale * (1 + style.scale_jitter * u(rng));
    const auto h = std::max<Eigen::Index>(1, std::lround(static_cast<double>(ink.rows()) * f));
    const auto w = std::max<Eigen::Index>(1, std::lround(static_cast<double>(ink.cols()) * f));
    parts.push_back(thicken(resize_bilinear(ink, h, w), style.thickness));
  }

  const double amp = std::min(std::abs(style.baseline_amp), 2.0);
  Eigen::Index max_h = 0, total_w = 0;
  for (const auto& p : parts) {
    max_h = std::max(max_h, p.rows());
    total_w += p.cols();
  }
  const long gap = std::lround(style.spacing);
  total_w += std::max(0L, gap) * static_cast<long>(parts.size());
  const double tan_slant = std::tan(style.slant_deg * std::numbers::pi / 180.0);
  const Eigen::Index pad = 6;
  const Eigen::Index height = max_h + 2 * pad + static_cast<Eigen::Index>(std::ceil(2 * amp));
  const Eigen::Index shear_room = static_cast<Eigen::Index>(std::ceil(std::abs(tan_slant) * static_cast<double>(height)));
  const Eigen::Index width = total_w + 2 * pad + shear_room;

  GrayImage ink = GrayImage::Zero(height, width);
  const double baseline = static_cast<double>(pad) + amp + static_cast<double>(max_h);
  const double origin = static_cast<double>(pad) + (tan_slant < 0 ? static_cast<double>(shear_room) : 0.0);
  double cursor = origin;
  for (const auto& p : parts) {
    // Wobble phase is measured from the word start so layout does not depend on slant.
    const double centre = cursor - origin + 0.5 * static_cast<double>(p.cols());
    const double wobble = amp * std::sin(2 * std::numbers::pi * centre / style.baseline_period + phase);
    const auto top = static_cast<Eigen::Index>(std::lround(baseline + wobble - static_cast<double>(p.rows())));
    const auto left = static_cast<Eigen::Index>(std::lround(cursor));
    for (Eigen::Index y = 0; y < p.rows(); ++y)
      for (Eigen::Index x = 0; x < p.cols(); ++x) {
        const Eigen::Index yy = top + y, xx = left + x;
        if (yy >= 0 && xx >= 0 && yy < height && xx < width) ink(yy, xx) = std::max(ink(yy, xx), p(y, x));
      }
    cursor += static_cast<double>(p.cols() + gap);
  }

  // Shear about the baseline: rows above it move right for positive slant.
  GrayImage out(height, width);
  for (Eigen::Index y = 0; y < height; ++y)
    for (Eigen::Index x = 0; x < width; ++x) {
      const double src_x = static_cast<double>(x) - tan_slant * (baseline - static_cast<double>(y));
      out(y, x) = 1.0 - std::clamp(sample_bilinear(ink, src_x, static_cast<double>(y), 0.0), 0.0, 1.0);
    }
  return out;
}

namespace {

// Central second moments (mu11, mu02) of the ink of a dark-on-white image.
std::pair<double, double> ink_moments(const GrayImage& word01) {
  const Eigen::ArrayXXd m = (1.0 - word01.array()).max(0.0);
  const double mass = m.sum();
  if (mass <= 0) return {0, 0};
  double mx = 0, my = 0;
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x) {
      mx += m(y, x) * static_cast<double>(x);
      my += m(y, x) * static_cast<double>(y);
    }
  mx /= mass;
  my /= mass;
  double mu11 = 0, mu02 = 0;
  for (Eigen::Index y = 0; y < m.rows(); ++y)
    for (Eigen::Index x = 0; x < m.cols(); ++x) {
      const double dy = static_cast<double>(y) - my;
      mu11 += m(y, x) * (static_cast<double>(x) - mx) * dy;
      mu02 += m(y, x) * dy * dy;
    }
  return {mu11, mu02};
}

}  // namespace

double estimate_slant(const GrayImage& word01) { return estimate_slant(std::vector<GrayImage>{word01}); }

double estimate_slant(const std::vector<GrayImage>& words) {
  double mu11 = 0, mu02 = 0;
  for (const auto& w : words) {
    const auto [a, b] = ink_moments(w);
    mu11 += a;
    mu02 += b;
  }
  return mu02 > 0 ? std::atan(-mu11 / mu02) * 180.0 / std::numbers::pi : 0.0;
}

WordCorpus generate_synthetic_corpus(const SyntheticCorpusOptions& o, const LabeledImages& glyphs,
                                     const std::filesystem::path& out_dir) {
  if (o.num_writers < 2) fail(ErrorKind::ConfigError, "need at least two synthetic writers");
  if (o.test_words_per_writer <= 0 || o.test_words_per_writer >= o.words_per_writer)
    fail(ErrorKind::ConfigError, "test words must leave at least one training word");
  if (o.min_letters < 1 || o.max_letters < o.min_letters)
    fail(ErrorKind::ConfigError, "bad letter count range");
  std::filesystem::create_directories(out_dir);
  std::mt19937_64 master(o.seed);
  std::vector<CorpusEntry> entries;
  for (int w = 0; w < o.num_writers; ++w) {
    char wid[16];
    std::snprintf(wid, sizeof wid, "w%02d", w);
    const SyntheticStyle style = random_style(master());
    const auto pool = allograph_pool(glyphs, style.glyph_seed, o.allographs_per_letter);
    std::mt19937_64 rng(master());
    std::filesystem::create_directories(out_dir / wid);
    for (int k = 0; k < o.words_per_writer; ++k) {
      const int n = std::uniform_int_distribution<int>(o.min_letters, o.max_letters)(rng);
      std::vector<int> letters(n);
      for (int& l : letters) l = std::uniform_int_distribution<int>(0, 25)(rng);
      const GrayImage word = render_word(letters, style, glyphs, pool, rng());
      char name[32];
      std::snprintf(name, sizeof name, "%03d.png", k);
      CorpusEntry e;
      e.writer = wid;
      e.page = "p" + std::to_string(k / std::max(1, o.words_per_page));
      e.split = k >= o.words_per_writer - o.test_words_per_writer ? Split::Test : Split::Train;
      e.path = out_dir / wid / name;
      save_png(e.path, word);
      entries.push_back(std::move(e));
    }
  }
  WordCorpus corpus = finalize_corpus(std::move(entries));
  write_manifest(out_dir / "manifest.csv", corpus);
  return corpus;
}

}  // namespace wid
