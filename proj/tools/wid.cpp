// Command-line front end: synth-corpus, train-cnn, calibrate, train-writers, identify, evaluate.

#include "wid/pipeline.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

using namespace wid;
namespace fs = std::filesystem;

namespace {

// Problems reading a model artifact exit as model errors whatever their kind.
struct ModelFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename F>
auto model_file(const fs::path& path, F&& load) {
  try {
    return load();
  } catch (const Error& e) {
    throw ModelFileError(path.string() + ": " + e.what());
  }
}

struct Options {
  std::string config;
  int jobs = 0;
  std::optional<std::uint64_t> seed;
  std::string pooling, layer;
  bool force = false;
  bool quiet = false;
};

void log_line(const std::string& msg) {
  static const auto start = std::chrono::steady_clock::now();
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::fprintf(stderr, "[%7.1fs] %s\n", s, msg.c_str());
}

PipelineConfig make_config(const Options& o) {
  PipelineConfig c = o.config.empty() ? PipelineConfig{} : load_config(o.config);
  if (o.seed) c.seed = *o.seed;
  if (!o.pooling.empty()) c.pooling = parse_pooling(o.pooling);
  if (!o.layer.empty()) c.layer = o.layer;
  c.validate();
  return c;
}

int jobs_of(const Options& o) {
  return o.jobs > 0 ? o.jobs : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

// An unset corpus path falls back to the synthetic corpus manifest.
WordCorpus open_corpus(const PipelineConfig& c, const std::string& manifest) {
  const auto path = manifest.empty() ? fs::path(c.paths.synthetic) / "manifest.csv" : fs::path(manifest);
  if (!fs::exists(path)) fail(ErrorKind::MissingFile, "corpus manifest " + path.string());
  return load_corpus(path, c.derived_seed("page-protocol"));
}

NetWeights<float> open_network(const PipelineConfig& c, bool force) {
  const fs::path path = c.paths.weights;
  if (!fs::exists(path)) fail(ErrorKind::MissingFile, "network weights " + path.string() + " (run train-cnn)");
  auto net = model_file(path, [&] { return load_weights(path); });
  if (!(net.spec == c.cnn.spec)) throw ModelFileError(path.string() + ": network architecture differs from config");
  check_digest(c.network_digest(), net.meta.config_digest, "network weights " + path.string(), force);
  return net;
}

ProfileMap open_profiles(const PipelineConfig& c, const std::vector<int>& layers, Pooling pooling, bool force) {
  if (pooling == Pooling::Average) return {};
  const fs::path dir = c.paths.profiles;
  for (int l : layers)
    if (!fs::exists(profile_path(dir, l)))
      fail(ErrorKind::MissingFile, "saliency profile " + profile_path(dir, l).string() + " (run calibrate)");
  return model_file(dir, [&] { return load_profiles(dir, layers, c.profile_digest(), force); });
}

ModelBundle open_bundle(const PipelineConfig& c) {
  const fs::path path = c.paths.models;
  if (!fs::exists(path)) fail(ErrorKind::MissingFile, "model bundle " + path.string() + " (run train-writers)");
  return model_file(path, [&] { return load_bundle(path); });
}

// ---------------------------------------------------------------------------

int cmd_synth_corpus(const Options& o, const std::string& out, int writers) {
  auto c = make_config(o);
  auto opts = c.synthetic.corpus;
  if (writers > 0) opts.num_writers = writers;
  // Corpora of different sizes get unrelated writer styles.
  opts.seed = c.derived_seed("synthetic-corpus/" + std::to_string(opts.num_writers));
  LabeledImages glyphs;
  if (!c.paths.emnist_images.empty())
    glyphs = load_emnist(c.paths.emnist_images, c.paths.emnist_labels, true);
  else
    glyphs = generate_glyph_set(c.synthetic.glyphs_per_class, c.derived_seed("synthetic-glyphs"));
  const fs::path dir = out.empty() ? fs::path(c.paths.synthetic) : fs::path(out);
  const auto corpus = generate_synthetic_corpus(opts, glyphs, dir);
  std::cout << "wrote " << corpus.entries.size() << " words by " << corpus.writers.size() << " writers: "
            << (dir / "manifest.csv").string() << '\n';
  return 0;
}

int cmd_train_cnn(const Options& o) {
  const auto c = make_config(o);
  const auto data = load_letter_data(c);
  log_line("letters: " + data.source + ", " + std::to_string(data.train.size()) + " train / " +
           std::to_string(data.val.size()) + " validation");
  const auto result = train_network(c, data, o.quiet ? Logger{} : Logger(log_line));
  const fs::path path = c.paths.weights;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_weights(result.weights, path);
  std::cout << "best validation accuracy " << result.weights.meta.val_accuracy << " (epoch "
            << result.weights.meta.best_epoch << "), weights " << path.string() << '\n';
  return 0;
}

int cmd_calibrate(const Options& o) {
  const auto c = make_config(o);
  const auto net = open_network(c, o.force);
  const auto corpus =
      open_corpus(c, c.paths.calibration_corpus.empty() ? c.paths.corpus : c.paths.calibration_corpus);
  const auto words = calibration_words(corpus, c.calibration.writers, c.calibration.words_per_writer);
  log_line("calibrating on " + std::to_string(words.size()) + " words");
  const auto profiles = calibrate_profiles(words, corpus, net, c, c.layers(), jobs_of(o),
                                           o.quiet ? Logger{} : Logger(log_line));
  save_profiles(profiles, c.paths.profiles);
  for (const auto& [l, p] : profiles) std::cout << "wrote " << profile_path(c.paths.profiles, l).string() << '\n';
  return 0;
}

int cmd_train_writers(const Options& o) {
  const auto c = make_config(o);
  const auto net = open_network(c, o.force);
  const auto profiles = open_profiles(c, c.layers(), c.pooling, o.force);
  const auto corpus = open_corpus(c, c.paths.corpus);
  const auto bundle = train_writer_models(corpus, net, c, profiles, jobs_of(o), o.quiet ? Logger{} : Logger(log_line));
  const fs::path path = c.paths.models;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  save_bundle(bundle, path);
  std::cout << "wrote " << bundle.writers.size() << " writer models per layer to " << path.string() << '\n';
  return 0;
}

void dump_fragments(const GrayImage& img, const PipelineConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream csv(dir / "keypoints.csv");
  csv << "index,x,y,sigma,orientation,octave,response,side\n" << std::setprecision(10);
  const auto frags = word_fragments(img, c.fragments);
  for (std::size_t i = 0; i < frags.size(); ++i) {
    const auto& k = frags[i].source;
    csv << i << ',' << k.x << ',' << k.y << ',' << k.sigma << ',' << k.orientation << ',' << k.octave << ','
        << k.response << ',' << frags[i].side << '\n';
    char name[32];
    std::snprintf(name, sizeof name, "fragment_%04zu.png", i);
    save_png(dir / name, frags[i].patch);
  }
}

void print_summary(const IdentifyReport& r) {
  std::cout << std::fixed << std::setprecision(4) << "words " << r.words.size() << " (skipped " << r.skipped.size()
            << "): top-1 " << r.word_top1 << ", top-5 " << r.word_top5 << "\npages " << r.pages << ": top-1 "
            << r.page_top1 << ", top-5 " << r.page_top5 << '\n';
  for (const auto& g : r.groups)
    std::cout << g.size << "-word groups " << g.groups << ": top-1 " << g.top1 << ", top-5 " << g.top5 << '\n';
}

int cmd_identify(const Options& o, const std::string& image, int words_per_writer, const std::string& dump,
                 const std::vector<int>& sweep) {
  const auto c = make_config(o);
  const auto bundle = open_bundle(c);
  std::vector<int> layers;
  for (const auto& lm : bundle.layers) layers.push_back(lm.layer);
  const auto profiles = open_profiles(c, layers, bundle.pooling, o.force);
  const auto net = open_network(c, o.force);

  if (!image.empty()) {
    const GrayImage img = normalize01(load_grayscale(image));
    if (!dump.empty()) dump_fragments(img, c, dump);
    check_digest(c.digest(), bundle.config_digest, "model bundle", o.force);
    const auto scores = identify_image(bundle, img, net, c, profiles);
    const auto top = top_k(scores, std::min<int>(5, static_cast<int>(scores.size())));
    for (std::size_t k = 0; k < top.size(); ++k)
      std::cout << k + 1 << ' ' << bundle.writers[static_cast<std::size_t>(top[k])] << ' '
                << scores[top[k]] << '\n';
    return 0;
  }

  std::vector<int> groups = sweep;
  if (words_per_writer > 0 && std::find(groups.begin(), groups.end(), words_per_writer) == groups.end())
    groups.push_back(words_per_writer);
  const auto corpus = open_corpus(c, c.paths.corpus);
  const auto report = identify_corpus(bundle, corpus, Split::Test, net, c, profiles, groups, jobs_of(o), o.force);
  write_report(report, c.paths.reports);
  save_config(c, fs::path(c.paths.reports) / "config.json");
  print_summary(report);
  std::cout << "report: " << (fs::path(c.paths.reports) / "report.csv").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Writer identification from handwritten word images"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "JSON configuration file");
  app.add_option("--jobs", o.jobs, "worker threads (default: all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", o.seed, "override the master seed");
  app.add_option("--pooling", o.pooling, "average, pre or post")
      ->check(CLI::IsMember({"average", "pre", "post"}));
  app.add_option("--layer", o.layer, "conv1, conv2, conv3 or fused")
      ->check(CLI::IsMember({"conv1", "conv2", "conv3", "fused"}));
  app.add_flag("--force", o.force, "accept artifacts made under a different configuration");
  app.add_flag("--quiet", o.quiet, "no progress log");

  std::string out;
  int writers = 0;
  auto* synth = app.add_subcommand("synth-corpus", "render a synthetic multi-writer word corpus");
  synth->add_option("--out", out, "output directory (default: paths.synthetic)");
  synth->add_option("--writers", writers, "number of writers (default: from config)");

  auto* train_cnn = app.add_subcommand("train-cnn", "train the letter network");
  auto* calibrate = app.add_subcommand("calibrate", "compute per-filter saliency profiles");
  auto* train_writers = app.add_subcommand("train-writers", "fit one-vs-all writer models");

  std::string image, dump;
  int words_per_writer = 0;
  auto* identify = app.add_subcommand("identify", "identify one image or the test split of the corpus");
  identify->add_option("--image", image, "single word image");
  identify->add_option("--dump-fragments", dump, "with --image: write keypoints.csv and fragment PNGs here");
  identify->add_option("--words-per-writer", words_per_writer, "also score groups of N test words per writer")
      ->check(CLI::PositiveNumber);

  int eval_words = 0;
  auto* evaluate = app.add_subcommand("evaluate", "identify the test split with a 1..5 word-group sweep");
  evaluate->add_option("--words-per-writer", eval_words, "largest group size in the sweep (default 5)")
      ->check(CLI::PositiveNumber);

  // Global options may also follow the subcommand.
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*synth) return cmd_synth_corpus(o, out, writers);
    if (*train_cnn) return cmd_train_cnn(o);
    if (*calibrate) return cmd_calibrate(o);
    if (*train_writers) return cmd_train_writers(o);
    if (*identify) return cmd_identify(o, image, words_per_writer, dump, {});
    if (*evaluate) {
      std::vector<int> sweep;
      for (int n = 1; n <= (eval_words > 0 ? eval_words : 5); ++n) sweep.push_back(n);
      return cmd_identify(o, "", 0, "", sweep);
    }
  } catch (const ModelFileError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
