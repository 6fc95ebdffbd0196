#pragma once

#include "wid/convnet.hpp"
#include "wid/data.hpp"
#include "wid/hogmap.hpp"
#include "wid/keypoints.hpp"
#include "wid/pooling.hpp"
#include "wid/saliency.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace wid {

struct FragmentConfig {
  DetectorParams detector;
  double eta = 6;
  int min_side = 17;
  /// Strongest-|response| fragments kept per word (0 keeps all).
  int max_fragments_per_word = 12;
};

struct CnnConfig {
  ConvSpec spec;
  TrainOptions training;
  int train_images = 10000;
  int val_images = 2000;
  /// Procedural glyphs per letter when no EMNIST files are configured.
  int glyphs_per_class = 500;
};

struct CalibrationConfig {
  SaliencyParams params;
  int writers = 50;
  int words_per_writer = 10;
};

struct SvmConfig {
  std::vector<double> C_grid{0.1, 1, 10, 100};
  std::vector<double> gamma_grid{1.0 / 128, 1.0 / 64, 1.0 / 32, 1.0 / 16, 1.0 / 8, 1.0 / 4, 1.0 / 2, 1, 2, 4, 8};
  double negative_ratio = 20;
  double tolerance = 1e-4;
  /// Share of each writer's training words held out for grid search and fusion.
  double validation_fraction = 1.0 / 3;
};

struct SyntheticConfig {
  SyntheticCorpusOptions corpus;
  int glyphs_per_class = 40;
};

struct PathsConfig {
  std::string emnist_images, emnist_labels;
  std::string corpus;              ///< manifest CSV for train-writers / identify
  std::string calibration_corpus;  ///< manifest CSV for calibrate (empty: `corpus`)
  std::string weights = "run/weights.sidw";
  std::string profiles = "run/profiles";  ///< directory of conv<k>.json files
  std::string models = "run/models.sidm";
  std::string reports = "run/report";
  std::string synthetic = "run/synthetic";
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  FragmentConfig fragments;
  CnnConfig cnn;
  std::map<int, HogParams> hog;  ///< per layer; missing layers use HogParams::for_layer
  CalibrationConfig calibration;
  Pooling pooling = Pooling::Post;
  std::string layer = "fused";  ///< conv1 | conv2 | conv3 | fused (conv1 + conv2)
  SvmConfig svm;
  double alpha_step = 0.05;
  SyntheticConfig synthetic;
  PathsConfig paths;

  /// Conv layers the writer models use, ascending.
  std::vector<int> layers() const;
  HogParams hog_for(int layer) const;
  /// Seed for one named random stream, derived from the master seed.
  std::uint64_t derived_seed(std::string_view stream) const;
  /// SHA-256 of the canonical JSON with the `paths` section removed.
  std::string digest() const;
  /// Digest of the sections the trained network depends on (seed, cnn).
  std::string network_digest() const;
  /// Digest of the sections saliency profiles depend on (seed, fragments, cnn, hog, calibration).
  std::string profile_digest() const;
  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

void to_json(nlohmann::json& j, const PipelineConfig& c);
/// Strict: unknown keys anywhere raise ConfigError. Missing keys keep their defaults.
void from_json(const nlohmann::json& j, PipelineConfig& c);

PipelineConfig load_config(const std::filesystem::path& path);
void save_config(const PipelineConfig& c, const std::filesystem::path& path);

/// "conv1" -> {1}, "fused" -> {1, 2}. Throws ConfigError.
std::vector<int> parse_layer_choice(const std::string& choice);

}  // namespace wid
