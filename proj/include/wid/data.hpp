#pragma once

#include "wid/dataset.hpp"
#include "wid/imaging.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace wid {

// ---------------------------------------------------------------------------
// IDX files (EMNIST/MNIST layout, big-endian header). Plain or gzip-compressed.

struct IdxImages {
  int count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> bytes;  ///< count * rows * cols, row-major per image
};

IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);
void write_idx_images(const std::filesystem::path& path, const IdxImages& images);
void write_idx_labels(const std::filesystem::path& path, const std::vector<std::uint8_t>& labels);

/// EMNIST letters: labels 1..26 become classes 0..25. With `letters_only`, any other
/// label is dropped; otherwise it raises LabelOutOfRange. EMNIST stores images
/// transposed, so `transpose` (default) restores upright glyphs. Pixels scaled to [0,1].
LabeledImages load_emnist(const std::filesystem::path& images_path,
                          const std::filesystem::path& labels_path, bool letters_only = true,
                          bool transpose = true);

/// First `n` images of a set.
LabeledImages take(const LabeledImages& set, std::size_t n);
/// SHA-256 over the 8-bit re-quantised pixels of the first `n` images.
std::string image_digest(const LabeledImages& set, std::size_t n);

/// One image of a set as a 2-D grid (values as stored).
GrayImage image_at(const LabeledImages& set, std::size_t index);

// ---------------------------------------------------------------------------
// Procedural letter glyphs: a stroke font rendered with random per-sample deformation.
// Stands in for EMNIST letters where the real files are unavailable.

struct GlyphOptions {
  double rotation_deg = 10;   ///< max |rotation|
  double shear = 0.25;        ///< max |horizontal shear|
  double scale_jitter = 0.12; ///< relative, per axis
  double point_jitter = 0.06; ///< smooth stroke-warp amplitude in glyph-box units
  double min_thickness = 1.0, max_thickness = 2.2;  ///< stroke half-width in pixels
};

/// Renders letter `cls` (0 = 'A') as a 28x28 EMNIST-style image: bright ink on black,
/// intensities 0..255, glyph fitted into the central 20x20 box.
GrayImage render_glyph(int cls, std::uint64_t seed, const GlyphOptions& options = {});

/// `per_class` samples of each of the 26 letters, interleaved by class, pixels in [0,1].
LabeledImages generate_glyph_set(int per_class, std::uint64_t seed, const GlyphOptions& options = {});

/// Writes a labelled set as EMNIST-layout IDX files (transposed images, labels 1..26).
void write_emnist_layout(const LabeledImages& set, const std::filesystem::path& images_path,
                         const std::filesystem::path& labels_path);

// ---------------------------------------------------------------------------
// Word corpora

enum class Split { Train, Validation, Test, Unassigned };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct CorpusEntry {
  std::string writer;
  std::string page;
  Split split = Split::Train;
  std::filesystem::path path;
};

struct WordCorpus {
  std::vector<CorpusEntry> entries;  ///< sorted by (writer, page, path)
  std::vector<std::string> writers;  ///< sorted roster

  std::vector<const CorpusEntry*> select(Split split) const;
  int writer_index(const std::string& writer) const;  ///< -1 if absent
};

/// Reads a manifest CSV with header writer_id,page_id,split,word_path. Relative paths
/// resolve against the manifest's directory. Rows with split "auto" (or empty) are
/// assigned by apply_page_protocol(protocol_seed) before validation.
WordCorpus load_corpus(const std::filesystem::path& manifest_path, std::uint64_t protocol_seed = 0);

/// Two-page protocol: writers with >= 2 pages get one random page for training and
/// another for testing (remaining pages unused); single-page writers put the first
/// ceil(n/2) words (path order) in training and the rest in testing.
void apply_page_protocol(std::vector<CorpusEntry>& entries, std::uint64_t seed);

/// Sorts, builds the roster, and enforces: no duplicate paths, every writer has train
/// and test words, page ids non-empty. Throws on violations.
WordCorpus finalize_corpus(std::vector<CorpusEntry> entries, bool check_files = true);

void write_manifest(const std::filesystem::path& manifest_path, const WordCorpus& corpus);

// ---------------------------------------------------------------------------
// Synthetic writers

struct SyntheticStyle {
  double slant_deg = 0;        ///< shear angle, positive leans right
  double thickness = 0;        ///< grey dilation radius in pixels, 0..2
  double scale_jitter = 0;     ///< per-glyph relative scale noise amplitude, <= 0.1
  double baseline_amp = 0;     ///< baseline sinusoid amplitude in pixels, <= 2
  double baseline_period = 40; ///< pixels
  double spacing = 1;          ///< extra gap between glyphs in pixels
  double glyph_scale = 1;      ///< overall glyph size factor
  std::uint64_t glyph_seed = 0;///< picks the writer's allograph pool
};

/// Style drawn from `seed`: slant in [-15, 15] deg, thickness [0, 2], jitter [0, 0.1],
/// wobble [0, 2] px.
SyntheticStyle random_style(std::uint64_t seed);

/// A writer's allographs: for each letter, `pool` glyph indices into the source set.
std::vector<std::vector<std::size_t>> allograph_pool(const LabeledImages& glyphs,
                                                     std::uint64_t glyph_seed, int pool);

/// Composes the given letters into one word image (dark ink on white, [0,1]).
GrayImage render_word(const std::vector<int>& letters, const SyntheticStyle& style,
                      const LabeledImages& glyphs,
                      const std::vector<std::vector<std::size_t>>& pool, std::uint64_t seed);

/// Moment-based slant estimate in degrees (positive leans right). A horizontal shear by
/// angle a adds exactly tan(a) to the underlying ratio -mu11/mu02.
double estimate_slant(const GrayImage& word01);
/// Writer-level slant: moments pooled over all words before taking the angle.
double estimate_slant(const std::vector<GrayImage>& words);

struct SyntheticCorpusOptions {
  int num_writers = 10;
  int words_per_writer = 40;
  int test_words_per_writer = 10;
  int words_per_page = 10;
  int allographs_per_letter = 2;
  int min_letters = 3, max_letters = 7;
  std::uint64_t seed = 7;
};

/// Writes word PNGs plus manifest.csv under `out_dir`; pages of words_per_page words,
/// the last test_words_per_writer words of each writer form the test split.
WordCorpus generate_synthetic_corpus(const SyntheticCorpusOptions& options, const LabeledImages& glyphs,
                                     const std::filesystem::path& out_dir);

}  // namespace wid
