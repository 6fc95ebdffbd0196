#include "doctest.h"

#include "wid/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

using namespace wid;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "wid_test_pipeline" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::MissingFile;
}

// Small enough for a unit test: 3 writers, 8 words each (3 test), random network.
PipelineConfig tiny_config() {
  PipelineConfig c;
  c.fragments.max_fragments_per_word = 6;
  c.calibration.writers = 3;
  c.calibration.words_per_writer = 3;
  c.calibration.params.components = 3;
  c.svm.C_grid = {1, 10};
  c.svm.gamma_grid = {0.125, 0.5};
  c.alpha_step = 0.25;
  c.synthetic.corpus.num_writers = 3;
  c.synthetic.corpus.words_per_writer = 8;
  c.synthetic.corpus.test_words_per_writer = 3;
  c.synthetic.corpus.words_per_page = 4;
  return c;
}

const WordCorpus& tiny_corpus() {
  static const WordCorpus corpus = [] {
    const auto c = tiny_config();
    return generate_synthetic_corpus(c.synthetic.corpus, generate_glyph_set(12, 3), scratch("corpus"));
  }();
  return corpus;
}

const NetWeights<float>& tiny_net() {
  static const auto net = [] {
    auto n = NetWeights<float>::initialize(ConvSpec{}, 11);
    n.meta.config_digest = tiny_config().network_digest();
    return n;
  }();
  return net;
}

}  // namespace

TEST_CASE("config: json round trip and strict keys") {
  PipelineConfig c;
  c.seed = 99;
  c.pooling = Pooling::Pre;
  c.layer = "conv2";
  c.svm.C_grid = {3, 4};
  c.hog[2].b = 6;
  const nlohmann::json j = c;
  const auto back = j.get<PipelineConfig>();
  CHECK(back.seed == 99);
  CHECK(back.pooling == Pooling::Pre);
  CHECK(back.layers() == std::vector<int>{2});
  CHECK(back.svm.C_grid == std::vector<double>{3, 4});
  CHECK(back.hog_for(2).b == 6);
  CHECK(back.digest() == c.digest());

  auto bad = j;
  bad["svm"]["C_grd"] = 1;
  CHECK(kind_of([&] { (void)bad.get<PipelineConfig>(); }) == ErrorKind::ConfigError);
  bad = j;
  bad["extra"] = 1;
  CHECK(kind_of([&] { (void)bad.get<PipelineConfig>(); }) == ErrorKind::ConfigError);
  bad = j;
  bad["pooling"] = "max";
  CHECK(kind_of([&] { (void)bad.get<PipelineConfig>(); }) == ErrorKind::ConfigError);
  CHECK(kind_of([] { (void)parse_layer_choice("conv9"); }) == ErrorKind::ConfigError);
  CHECK(parse_layer_choice("fused") == std::vector<int>{1, 2});
}

TEST_CASE("config: digest ignores paths but tracks everything else") {
  PipelineConfig a, b;
  b.paths.models = "elsewhere.sidm";
  b.paths.corpus = "/data/x.csv";
  CHECK(a.digest() == b.digest());
  b.svm.tolerance = 1e-5;
  CHECK(a.digest() != b.digest());
  CHECK(a.network_digest() == b.network_digest());
  CHECK(a.profile_digest() == b.profile_digest());
  b.pooling = Pooling::Pre;
  CHECK(a.profile_digest() == b.profile_digest());
  CHECK(a.digest() != b.digest());
  b.calibration.writers = 20;
  CHECK(a.network_digest() == b.network_digest());
  CHECK(a.profile_digest() != b.profile_digest());
  b.cnn.training.epochs = 3;
  CHECK(a.network_digest() != b.network_digest());
  CHECK(a.derived_seed("x") != a.derived_seed("y"));
  b = a;
  b.seed = 8;
  CHECK(a.derived_seed("x") != b.derived_seed("x"));
}

TEST_CASE("config: file loading resolves relative paths and validates") {
  const auto dir = scratch("config");
  PipelineConfig c;
  c.paths.models = "m.sidm";
  save_config(c, dir / "c.json");
  const auto loaded = load_config(dir / "c.json");
  CHECK(fs::path(loaded.paths.models) == dir / "m.sidm");
  CHECK(loaded.digest() == c.digest());

  std::ofstream(dir / "bad.json") << R"({"svm": {"tolerance": -1}})";
  CHECK(kind_of([&] { (void)load_config(dir / "bad.json"); }) == ErrorKind::ConfigError);
  std::ofstream(dir / "junk.json") << "{not json";
  CHECK(kind_of([&] { (void)load_config(dir / "junk.json"); }) == ErrorKind::ConfigError);
  CHECK(kind_of([&] { (void)load_config(dir / "absent.json"); }) == ErrorKind::ConfigError);
}

TEST_CASE("validation split: per-writer partition with both sides populated") {
  std::vector<int> ww;
  for (int w = 0; w < 5; ++w)
    for (int k = 0; k < 2 + 3 * w; ++k) ww.push_back(w);
  ww.push_back(7);  // single-word writer stays on the fit side
  const auto [fit, val] = validation_split(ww, 1.0 / 3, 42);
  std::set<int> all(fit.begin(), fit.end());
  for (int v : val) CHECK(all.insert(v).second);
  CHECK(all.size() == ww.size());
  CHECK(std::is_sorted(fit.begin(), fit.end()));
  for (int w = 0; w < 5; ++w) {
    const auto n = std::count(ww.begin(), ww.end(), w);
    const auto nv = std::count_if(val.begin(), val.end(), [&](int i) { return ww[static_cast<std::size_t>(i)] == w; });
    CHECK(nv >= 1);
    CHECK(nv <= n - 1);
    CHECK(nv == std::clamp<long>(std::lround(n / 3.0), 1, n - 1));
  }
  CHECK(std::find(val.begin(), val.end(), static_cast<int>(ww.size()) - 1) == val.end());
  CHECK(validation_split(ww, 1.0 / 3, 42) == validation_split(ww, 1.0 / 3, 42));
  CHECK(validation_split(ww, 1.0 / 3, 42).second != validation_split(ww, 1.0 / 3, 43).second);
}

TEST_CASE("word fragments: cap keeps the strongest responses in detection order") {
  const auto& corpus = tiny_corpus();
  const GrayImage img = normalize01(load_grayscale(corpus.entries.front().path));
  FragmentConfig all;
  all.max_fragments_per_word = 0;
  const auto full = word_fragments(img, all);
  REQUIRE(full.size() > 3);
  FragmentConfig capped = all;
  capped.max_fragments_per_word = 3;
  const auto few = word_fragments(img, capped);
  REQUIRE(few.size() == 3);

  std::vector<double> mags;
  for (const auto& f : full) mags.push_back(std::abs(f.source.response));
  std::sort(mags.rbegin(), mags.rend());
  std::size_t last = 0;
  for (std::size_t k = 0; k < few.size(); ++k) {
    CHECK(std::abs(few[k].source.response) >= mags[2]);
    std::size_t at = last;
    while (at < full.size() && !(full[at].source.x == few[k].source.x && full[at].source.y == few[k].source.y &&
                                 full[at].source.sigma == few[k].source.sigma))
      ++at;
    CHECK(at < full.size());
    last = at + 1;
  }
  for (const auto& f : full) {
    CHECK(f.side >= all.min_side);
    const auto in = network_input(f);
    CHECK(in.rows() == f.side);
    CHECK(double(in(0, 0)) == doctest::Approx(1.0 - f.patch(0, 0)).epsilon(1e-6));
  }
}

TEST_CASE("pipeline: tiny end-to-end run is complete and deterministic") {
  const auto& corpus = tiny_corpus();
  const auto& net = tiny_net();
  auto cfg = tiny_config();
  const auto layers = cfg.layers();

  const auto calib = calibration_words(corpus, cfg.calibration.writers, cfg.calibration.words_per_writer);
  CHECK(calib.size() == 9);
  const auto profiles = calibrate_profiles(calib, corpus, net, cfg, layers, 1);
  REQUIRE(profiles.size() == 2);
  for (const auto& [l, p] : profiles) {
    CHECK(p.layer == l);
    CHECK(p.writers == 3);
    CHECK(p.config_digest == cfg.profile_digest());
    double sum = 0;
    for (double w : p.weights) sum += w;
    CHECK(sum == doctest::Approx(1.0));
  }
  const auto dir = scratch("run");
  save_profiles(profiles, dir / "profiles");
  const auto reloaded = load_profiles(dir / "profiles", layers, cfg.profile_digest(), false);
  CHECK(reloaded.at(1).digest() == profiles.at(1).digest());
  CHECK(kind_of([&] { (void)load_profiles(dir / "profiles", layers, "other", false); }) == ErrorKind::DigestMismatch);
  CHECK_NOTHROW((void)load_profiles(dir / "profiles", layers, "other", true));

  const auto bundle = train_writer_models(corpus, net, cfg, profiles, 1);
  CHECK(bundle.writers == corpus.writers);
  CHECK(bundle.layers.size() == 2);
  CHECK(bundle.alpha >= 0);
  CHECK(bundle.alpha <= 1);
  CHECK(bundle.config_digest == cfg.digest());

  const auto report = identify_corpus(bundle, corpus, Split::Test, net, cfg, profiles, {1, 2}, 1, false);
  CHECK(report.words.size() + report.skipped.size() == corpus.select(Split::Test).size());
  for (const auto& w : report.words) {
    CHECK(w.scores.size() == 3);
    CHECK(w.rank >= 1);
    CHECK(w.rank <= 3);
    CHECK(w.fragments >= 1);
    CHECK(w.fragments <= cfg.fragments.max_fragments_per_word);
  }
  CHECK(report.pages >= 3);
  REQUIRE(report.groups.size() == 2);
  CHECK(report.groups[0].groups == static_cast<int>(report.words.size()));

  write_report(report, dir / "report");
  std::ifstream csv(dir / "report" / "report.csv");
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == static_cast<int>(report.words.size()) + 1);
  CHECK(fs::exists(dir / "report" / "summary.json"));

  // Same inputs, parallel workers: identical results.
  const auto again = train_writer_models(corpus, net, cfg, profiles, 3);
  CHECK(again.alpha == bundle.alpha);
  const auto report2 = identify_corpus(again, corpus, Split::Test, net, cfg, profiles, {1, 2}, 3, false);
  REQUIRE(report2.words.size() == report.words.size());
  for (std::size_t i = 0; i < report.words.size(); ++i) CHECK(report2.words[i].scores == report.words[i].scores);

  // Mismatched configuration is refused unless forced.
  auto other = cfg;
  other.svm.tolerance = 1e-3;
  CHECK(kind_of([&] { (void)identify_corpus(bundle, corpus, Split::Test, net, other, profiles, {}, 1, false); }) ==
        ErrorKind::DigestMismatch);
  CHECK_NOTHROW((void)identify_corpus(bundle, corpus, Split::Test, net, other, profiles, {}, 1, true));

  const auto s = identify_image(bundle, normalize01(load_grayscale(report.words[0].path)), net, cfg, profiles);
  CHECK(s.isApprox(report.words[0].scores, 1e-12));
}

TEST_CASE("pipeline: average pooling needs no profiles") {
  auto cfg = tiny_config();
  cfg.pooling = Pooling::Average;
  cfg.layer = "conv3";
  const auto bundle = train_writer_models(tiny_corpus(), tiny_net(), cfg, {}, 1);
  CHECK(bundle.alpha == 1);
  CHECK(bundle.layers.size() == 1);
  CHECK(bundle.layers[0].saliency_digest.empty());
  const auto rep = identify_corpus(bundle, tiny_corpus(), Split::Test, tiny_net(), cfg, {}, {}, 1, false);
  CHECK(!rep.words.empty());
  auto post = cfg;
  post.pooling = Pooling::Post;
  CHECK_THROWS_AS((void)identify_corpus(bundle, tiny_corpus(), Split::Test, tiny_net(), post, {}, {}, 1, false), Error);
}
