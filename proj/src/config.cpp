#include "wid/config.hpp"

#include "wid/container.hpp"
#include "wid/error.hpp"

#include <fstream>
#include <initializer_list>
#include <set>

namespace wid {

namespace {

using json = nlohmann::json;

// Rejects keys outside `allowed` and gives typed access to the rest.
class Section {
 public:
  Section(const json& j, std::string name, std::initializer_list<const char*> allowed) : j_(j), name_(std::move(name)) {
    if (!j.is_object()) fail(ErrorKind::ConfigError, "'" + name_ + "' must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items())
      if (!ok.count(key)) fail(ErrorKind::ConfigError, "unknown key '" + key + "' in " + name_);
  }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorKind::ConfigError, name_ + "." + key + ": " + e.what());
    }
  }
  bool has(const char* key) const { return j_.contains(key); }
  const json& at(const char* key) const { return j_.at(key); }
  std::string path(const char* key) const { return name_ + "." + key; }

 private:
  const json& j_;
  std::string name_;
};

json hog_json(const HogParams& p) { return {{"m", p.m}, {"n", p.n}, {"t", p.t}, {"b", p.b}, {"k", p.k}}; }

HogParams hog_from(const json& j, const std::string& name, HogParams p) {
  Section s(j, name, {"m", "n", "t", "b", "k"});
  s.get("m", p.m);
  s.get("n", p.n);
  s.get("t", p.t);
  s.get("b", p.b);
  s.get("k", p.k);
  return p;
}

int layer_from_name(const std::string& name) {
  if (name.size() == 5 && name.rfind("conv", 0) == 0 && name[4] >= '1' && name[4] <= '6') return name[4] - '0';
  fail(ErrorKind::ConfigError, "layer names are conv1..conv6 (got '" + name + "')");
}

}  // namespace

std::vector<int> parse_layer_choice(const std::string& choice) {
  if (choice == "fused") return {1, 2};
  if (choice == "conv1" || choice == "conv2" || choice == "conv3") return {layer_from_name(choice)};
  fail(ErrorKind::ConfigError, "layer must be conv1, conv2, conv3 or fused (got '" + choice + "')");
}

std::vector<int> PipelineConfig::layers() const { return parse_layer_choice(layer); }

HogParams PipelineConfig::hog_for(int l) const {
  const auto it = hog.find(l);
  return it == hog.end() ? HogParams::for_layer(l) : it->second;
}

std::uint64_t PipelineConfig::derived_seed(std::string_view stream) const {
  // FNV-1a over the stream name, mixed into the master seed with splitmix64.
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : stream) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string PipelineConfig::digest() const {
  json j = *this;
  j.erase("paths");
  return sha256_hex(j.dump());
}

namespace {

std::string sections_digest(const PipelineConfig& c, std::initializer_list<const char*> keep) {
  const json all = c;
  json j = json::object();
  for (const char* k : keep) j[k] = all.at(k);
  return sha256_hex(j.dump());
}

}  // namespace

std::string PipelineConfig::network_digest() const { return sections_digest(*this, {"seed", "cnn"}); }

std::string PipelineConfig::profile_digest() const {
  return sections_digest(*this, {"seed", "fragments", "cnn", "hog", "calibration"});
}

void PipelineConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::ConfigError, what);
  };
  require(fragments.eta > 0, "fragments.eta must be positive");
  require(fragments.min_side >= 1, "fragments.min_side must be >= 1");
  require(fragments.max_fragments_per_word >= 0, "fragments.max_fragments_per_word must be >= 0");
  require(fragments.detector.scales_per_octave >= 1, "keypoint scales_per_octave must be >= 1");
  require(fragments.detector.sigma0 > 0, "keypoint sigma0 must be positive");
  try {
    cnn.spec.validate();
  } catch (const Error& e) {
    fail(ErrorKind::ConfigError, e.what());
  }
  require(cnn.training.epochs >= 1 && cnn.training.batch_size >= 1, "cnn training needs epochs and batch size >= 1");
  require(cnn.training.learning_rate > 0, "cnn learning rate must be positive");
  require(cnn.train_images >= 1 && cnn.val_images >= 1, "cnn image counts must be positive");
  for (const auto& [l, p] : hog) {
    require(l >= 1 && l <= kConvBlocks, "hog layers are conv1..conv6");
    p.validate();
  }
  for (int l : layers()) hog_for(l).validate();
  require(calibration.params.components >= 1, "calibration components must be >= 1");
  require(calibration.params.bins >= 2, "calibration bins must be >= 2");
  require(calibration.params.ridge >= 0 && calibration.params.lasso >= 0, "penalties must be >= 0");
  require(calibration.writers >= 1 && calibration.words_per_writer >= 1, "calibration set must be non-empty");
  require(!svm.C_grid.empty() && !svm.gamma_grid.empty(), "svm grids must be non-empty");
  for (double c : svm.C_grid) require(c > 0, "svm C values must be positive");
  for (double g : svm.gamma_grid) require(g > 0, "svm gamma values must be positive");
  require(svm.tolerance > 0, "svm tolerance must be positive");
  require(svm.validation_fraction > 0 && svm.validation_fraction < 1, "svm validation_fraction must lie in (0, 1)");
  require(alpha_step > 0 && alpha_step <= 1, "alpha_step must lie in (0, 1]");
  const auto& sc = synthetic.corpus;
  require(sc.num_writers >= 2, "synthetic corpus needs at least two writers");
  require(sc.words_per_writer > sc.test_words_per_writer && sc.test_words_per_writer >= 1,
          "synthetic corpus needs train and test words");
  require(sc.words_per_page >= 1 && sc.min_letters >= 1 && sc.max_letters >= sc.min_letters,
          "synthetic word/page sizes invalid");
  require(synthetic.glyphs_per_class >= 1, "synthetic glyphs_per_class must be >= 1");
}

void to_json(json& j, const PipelineConfig& c) {
  const auto& d = c.fragments.detector;
  json hog = json::object();
  for (int l = 1; l <= 3; ++l) hog["conv" + std::to_string(l)] = hog_json(c.hog_for(l));
  for (const auto& [l, p] : c.hog) hog["conv" + std::to_string(l)] = hog_json(p);
  const auto& t = c.cnn.training;
  const auto& s = c.synthetic.corpus;
  j = {
      {"seed", c.seed},
      {"fragments",
       {{"octaves", d.octaves},
        {"scales_per_octave", d.scales_per_octave},
        {"sigma0", d.sigma0},
        {"contrast_threshold", d.contrast_thresh},
        {"edge_ratio", d.edge_ratio},
        {"eta", c.fragments.eta},
        {"min_side", c.fragments.min_side},
        {"max_fragments_per_word", c.fragments.max_fragments_per_word}}},
      {"cnn",
       {{"spec", c.cnn.spec},
        {"epochs", t.epochs},
        {"learning_rate", t.learning_rate},
        {"lr_step_epochs", t.lr_step_epochs},
        {"lr_decay", t.lr_decay},
        {"batch_size", t.batch_size},
        {"target_accuracy", t.target_accuracy},
        {"train_images", c.cnn.train_images},
        {"val_images", c.cnn.val_images},
        {"glyphs_per_class", c.cnn.glyphs_per_class}}},
      {"hog", hog},
      {"calibration",
       {{"params", c.calibration.params},
        {"writers", c.calibration.writers},
        {"words_per_writer", c.calibration.words_per_writer}}},
      {"pooling", to_string(c.pooling)},
      {"layer", c.layer},
      {"svm",
       {{"C_grid", c.svm.C_grid},
        {"gamma_grid", c.svm.gamma_grid},
        {"negative_ratio", c.svm.negative_ratio},
        {"tolerance", c.svm.tolerance},
        {"validation_fraction", c.svm.validation_fraction}}},
      {"alpha_step", c.alpha_step},
      {"synthetic",
       {{"writers", s.num_writers},
        {"words_per_writer", s.words_per_writer},
        {"test_words_per_writer", s.test_words_per_writer},
        {"words_per_page", s.words_per_page},
        {"allographs_per_letter", s.allographs_per_letter},
        {"min_letters", s.min_letters},
        {"max_letters", s.max_letters},
        {"glyphs_per_class", c.synthetic.glyphs_per_class}}},
      {"paths",
       {{"emnist_images", c.paths.emnist_images},
        {"emnist_labels", c.paths.emnist_labels},
        {"corpus", c.paths.corpus},
        {"calibration_corpus", c.paths.calibration_corpus},
        {"weights", c.paths.weights},
        {"profiles", c.paths.profiles},
        {"models", c.paths.models},
        {"reports", c.paths.reports},
        {"synthetic", c.paths.synthetic}}},
  };
}

void from_json(const json& j, PipelineConfig& c) {
  Section top(j, "config", {"seed", "fragments", "cnn", "hog", "calibration", "pooling", "layer", "svm",
                            "alpha_step", "synthetic", "paths"});
  top.get("seed", c.seed);
  if (top.has("fragments")) {
    Section s(top.at("fragments"), "fragments",
              {"octaves", "scales_per_octave", "sigma0", "contrast_threshold", "edge_ratio", "eta", "min_side",
               "max_fragments_per_word"});
    auto& d = c.fragments.detector;
    s.get("octaves", d.octaves);
    s.get("scales_per_octave", d.scales_per_octave);
    s.get("sigma0", d.sigma0);
    s.get("contrast_threshold", d.contrast_thresh);
    s.get("edge_ratio", d.edge_ratio);
    s.get("eta", c.fragments.eta);
    s.get("min_side", c.fragments.min_side);
    s.get("max_fragments_per_word", c.fragments.max_fragments_per_word);
  }
  if (top.has("cnn")) {
    Section s(top.at("cnn"), "cnn",
              {"spec", "epochs", "learning_rate", "lr_step_epochs", "lr_decay", "batch_size", "target_accuracy",
               "train_images", "val_images", "glyphs_per_class"});
    if (s.has("spec")) {
      const json& sj = s.at("spec");
      Section spec(sj, "cnn.spec", {"blocks", "in_channels", "classes", "bn_momentum", "bn_eps"});
      try {
        c.cnn.spec = sj.get<ConvSpec>();
      } catch (const json::exception& e) {
        fail(ErrorKind::ConfigError, std::string("cnn.spec: ") + e.what());
      } catch (const Error& e) {
        fail(ErrorKind::ConfigError, std::string("cnn.spec: ") + e.what());
      }
    }
    auto& t = c.cnn.training;
    s.get("epochs", t.epochs);
    s.get("learning_rate", t.learning_rate);
    s.get("lr_step_epochs", t.lr_step_epochs);
    s.get("lr_decay", t.lr_decay);
    s.get("batch_size", t.batch_size);
    s.get("target_accuracy", t.target_accuracy);
    s.get("train_images", c.cnn.train_images);
    s.get("val_images", c.cnn.val_images);
    s.get("glyphs_per_class", c.cnn.glyphs_per_class);
  }
  if (top.has("hog")) {
    const json& h = top.at("hog");
    if (!h.is_object()) fail(ErrorKind::ConfigError, "'hog' must be an object");
    for (const auto& [name, params] : h.items()) {
      const int l = layer_from_name(name);
      c.hog[l] = hog_from(params, "hog." + name, c.hog_for(l));
    }
  }
  if (top.has("calibration")) {
    Section s(top.at("calibration"), "calibration", {"params", "writers", "words_per_writer"});
    if (s.has("params")) {
      try {
        from_json(s.at("params"), c.calibration.params);
      } catch (const json::exception& e) {
        fail(ErrorKind::ConfigError, std::string("calibration.params: ") + e.what());
      }
    }
    s.get("writers", c.calibration.writers);
    s.get("words_per_writer", c.calibration.words_per_writer);
  }
  if (top.has("pooling")) {
    std::string p;
    top.get("pooling", p);
    c.pooling = parse_pooling(p);
  }
  top.get("layer", c.layer);
  if (top.has("svm")) {
    Section s(top.at("svm"), "svm", {"C_grid", "gamma_grid", "negative_ratio", "tolerance", "validation_fraction"});
    s.get("C_grid", c.svm.C_grid);
    s.get("gamma_grid", c.svm.gamma_grid);
    s.get("negative_ratio", c.svm.negative_ratio);
    s.get("tolerance", c.svm.tolerance);
    s.get("validation_fraction", c.svm.validation_fraction);
  }
  top.get("alpha_step", c.alpha_step);
  if (top.has("synthetic")) {
    Section s(top.at("synthetic"), "synthetic",
              {"writers", "words_per_writer", "test_words_per_writer", "words_per_page", "allographs_per_letter",
               "min_letters", "max_letters", "glyphs_per_class"});
    auto& o = c.synthetic.corpus;
    s.get("writers", o.num_writers);
    s.get("words_per_writer", o.words_per_writer);
    s.get("test_words_per_writer", o.test_words_per_writer);
    s.get("words_per_page", o.words_per_page);
    s.get("allographs_per_letter", o.allographs_per_letter);
    s.get("min_letters", o.min_letters);
    s.get("max_letters", o.max_letters);
    s.get("glyphs_per_class", c.synthetic.glyphs_per_class);
  }
  if (top.has("paths")) {
    Section s(top.at("paths"), "paths",
              {"emnist_images", "emnist_labels", "corpus", "calibration_corpus", "weights", "profiles", "models",
               "reports", "synthetic"});
    s.get("emnist_images", c.paths.emnist_images);
    s.get("emnist_labels", c.paths.emnist_labels);
    s.get("corpus", c.paths.corpus);
    s.get("calibration_corpus", c.paths.calibration_corpus);
    s.get("weights", c.paths.weights);
    s.get("profiles", c.paths.profiles);
    s.get("models", c.paths.models);
    s.get("reports", c.paths.reports);
    s.get("synthetic", c.paths.synthetic);
  }
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::ConfigError, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::ConfigError, "config is not valid JSON: " + std::string(e.what()));
  }
  PipelineConfig c;
  from_json(j, c);
  // Relative paths are resolved against the config file's directory.
  const auto base = std::filesystem::absolute(path).parent_path();
  for (std::string* p : {&c.paths.emnist_images, &c.paths.emnist_labels, &c.paths.corpus,
                         &c.paths.calibration_corpus, &c.paths.weights, &c.paths.profiles, &c.paths.models,
                         &c.paths.reports, &c.paths.synthetic})
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).lexically_normal().string();
  c.validate();
  return c;
}

void save_config(const PipelineConfig& c, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::ConfigError, "cannot write " + path.string());
  out << json(c).dump(2) << '\n';
}

}  // namespace wid
