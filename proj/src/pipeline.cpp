#include "wid/pipeline.hpp"

#include "wid/error.hpp"
#include "wid/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace wid {

namespace {

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

GrayImage load_word(const CorpusEntry& e) { return normalize01(load_grayscale(e.path)); }

}  // namespace

// ---------------------------------------------------------------------------
// Fragments and descriptors

std::vector<Fragment> word_fragments(const GrayImage& img01, const FragmentConfig& cfg) {
  std::vector<Fragment> out;
  for (const auto& kp : detect_keypoints(img01, cfg.detector))
    if (auto f = extract_fragment(img01, kp, cfg.eta, cfg.min_side)) out.push_back(std::move(*f));
  const auto cap = static_cast<std::size_t>(cfg.max_fragments_per_word);
  if (cap > 0 && out.size() > cap) {
    std::vector<std::size_t> order(out.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return std::abs(out[a].source.response) > std::abs(out[b].source.response);
    });
    order.resize(cap);
    std::sort(order.begin(), order.end());
    std::vector<Fragment> kept;
    for (std::size_t i : order) kept.push_back(std::move(out[i]));
    out = std::move(kept);
  }
  return out;
}

Grid<float> network_input(const Fragment& fragment) { return (1.0 - fragment.patch.array()).cast<float>(); }

std::vector<Eigen::MatrixXd> describe_word(const GrayImage& img01, const NetWeights<float>& net,
                                           const PipelineConfig& cfg, const std::vector<int>& layers,
                                           Pooling pooling, const ProfileMap& profiles) {
  if (layers.empty()) fail(ErrorKind::ConfigError, "no layers requested");
  const auto frags = word_fragments(img01, cfg.fragments);
  const int deepest = *std::max_element(layers.begin(), layers.end());
  std::vector<Eigen::MatrixXd> out;
  std::vector<const SaliencyProfile*> prof;
  std::vector<HogParams> hog;
  for (int l : layers) {
    hog.push_back(cfg.hog_for(l));
    out.emplace_back(static_cast<Eigen::Index>(frags.size()), hog.back().length());
    const auto it = profiles.find(l);
    prof.push_back(it == profiles.end() ? nullptr : &it->second);
  }
  for (std::size_t f = 0; f < frags.size(); ++f) {
    const auto stacks = forward_all(network_input(frags[f]), net, deepest, cfg.fragments.min_side);
    for (std::size_t li = 0; li < layers.size(); ++li)
      out[li].row(static_cast<Eigen::Index>(f)) =
          pooled_descriptor(stacks[static_cast<std::size_t>(layers[li] - 1)], pooling, prof[li], hog[li]).values.transpose();
  }
  return out;
}

CorpusDescriptors describe_corpus(const std::vector<const CorpusEntry*>& words, const WordCorpus& corpus,
                                  const NetWeights<float>& net, const PipelineConfig& cfg,
                                  const std::vector<int>& layers, Pooling pooling, const ProfileMap& profiles,
                                  int jobs) {
  std::vector<std::vector<Eigen::MatrixXd>> per_word(words.size());
  parallel_for(words.size(), jobs, [&](std::size_t i) {
    per_word[i] = describe_word(load_word(*words[i]), net, cfg, layers, pooling, profiles);
  });

  CorpusDescriptors d;
  d.layers = layers;
  d.sets.resize(layers.size());
  Eigen::Index total = 0;
  for (const auto& w : per_word) total += w[0].rows();
  for (std::size_t li = 0; li < layers.size(); ++li) d.sets[li].X.resize(total, cfg.hog_for(layers[li]).length());
  std::vector<Eigen::Index> rows(layers.size(), 0);
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (per_word[i][0].rows() == 0) {
      d.skipped.push_back(words[i]);
      continue;
    }
    const int word = static_cast<int>(d.words.size());
    d.words.push_back(words[i]);
    const int writer = corpus.writer_index(words[i]->writer);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      auto& set = d.sets[li];
      const auto& m = per_word[i][li];
      set.X.middleRows(rows[li], m.rows()) = m;
      rows[li] += m.rows();
      set.word_writer.push_back(writer);
      for (Eigen::Index r = 0; r < m.rows(); ++r) set.word_of_row.push_back(word);
      if (li == 0)
        for (Eigen::Index r = 0; r < m.rows(); ++r) d.zero_rows += m.row(r).isZero(0);
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Network

LetterData load_letter_data(const PipelineConfig& cfg) {
  LetterData d;
  const auto need = static_cast<std::size_t>(cfg.cnn.train_images + cfg.cnn.val_images);
  LabeledImages all;
  if (!cfg.paths.emnist_images.empty()) {
    all = load_emnist(cfg.paths.emnist_images, cfg.paths.emnist_labels, true);
    d.source = "emnist:" + cfg.paths.emnist_images;
  } else {
    const int per_class = std::max(cfg.cnn.glyphs_per_class, static_cast<int>((need + 25) / 26));
    all = generate_glyph_set(per_class, cfg.derived_seed("cnn-glyphs"));
    d.source = "procedural-glyphs";
  }
  if (all.size() < need)
    fail(ErrorKind::EmptyDataset, "letter set has " + std::to_string(all.size()) + " images, need " +
                                      std::to_string(need));
  // Shuffle once so train and validation draw from the same distribution.
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), std::mt19937_64(cfg.derived_seed("cnn-split")));
  auto pick = [&](std::size_t from, std::size_t count) {
    LabeledImages s;
    s.rows = all.rows;
    s.cols = all.cols;
    s.pixels.resize(static_cast<Eigen::Index>(count), all.pixels.cols());
    for (std::size_t i = 0; i < count; ++i) {
      s.pixels.row(static_cast<Eigen::Index>(i)) = all.pixels.row(static_cast<Eigen::Index>(order[from + i]));
      s.labels.push_back(all.labels[order[from + i]]);
    }
    return s;
  };
  d.train = pick(0, static_cast<std::size_t>(cfg.cnn.train_images));
  d.val = pick(static_cast<std::size_t>(cfg.cnn.train_images), static_cast<std::size_t>(cfg.cnn.val_images));
  return d;
}

TrainResult train_network(const PipelineConfig& cfg, const LetterData& data, const Logger& log) {
  TrainOptions opts = cfg.cnn.training;
  opts.seed = cfg.derived_seed("cnn");
  auto result = train_classifier(data.train, data.val, cfg.cnn.spec, opts, [&](const EpochReport& r) {
    std::ostringstream s;
    s << "epoch " << r.epoch << " lr " << r.learning_rate << " loss " << r.train_loss << " train "
      << r.train_accuracy << " val " << r.val_accuracy << " (" << r.seconds << " s)";
    say(log, s.str());
  });
  result.weights.meta.config_digest = cfg.network_digest();
  return result;
}

// ---------------------------------------------------------------------------
// Calibration

std::vector<const CorpusEntry*> calibration_words(const WordCorpus& corpus, int writers, int words_per_writer) {
  std::vector<const CorpusEntry*> out;
  const int W = std::min<int>(writers, static_cast<int>(corpus.writers.size()));
  for (int w = 0; w < W; ++w) {
    int taken = 0;
    for (const auto& e : corpus.entries)
      if (e.writer == corpus.writers[static_cast<std::size_t>(w)] && e.split == Split::Train &&
          taken < words_per_writer) {
        out.push_back(&e);
        ++taken;
      }
  }
  return out;
}

ProfileMap calibrate_profiles(const std::vector<const CorpusEntry*>& words, const WordCorpus& corpus,
                              const NetWeights<float>& net, const PipelineConfig& cfg,
                              const std::vector<int>& layers, int jobs, const Logger& log) {
  if (words.empty()) fail(ErrorKind::EmptyDataset, "no calibration words");
  const int deepest = *std::max_element(layers.begin(), layers.end());
  // Per word, per layer: one (filters x length) HOG block per fragment.
  std::vector<std::vector<std::vector<Eigen::MatrixXd>>> hogs(words.size());
  parallel_for(words.size(), jobs, [&](std::size_t i) {
    const auto frags = word_fragments(load_word(*words[i]), cfg.fragments);
    hogs[i].resize(layers.size());
    for (const auto& f : frags) {
      const auto stacks = forward_all(network_input(f), net, deepest, cfg.fragments.min_side);
      for (std::size_t li = 0; li < layers.size(); ++li)
        hogs[i][li].push_back(filter_descriptors(stacks[static_cast<std::size_t>(layers[li] - 1)], cfg.hog_for(layers[li])));
    }
  });

  // Calibration writers are numbered by first appearance.
  std::vector<std::string> names;
  std::vector<int> writer_of_row;
  for (std::size_t i = 0; i < words.size(); ++i) {
    auto it = std::find(names.begin(), names.end(), words[i]->writer);
    if (it == names.end()) it = names.insert(names.end(), words[i]->writer);
    writer_of_row.insert(writer_of_row.end(), hogs[i].empty() ? 0 : hogs[i][0].size(),
                         static_cast<int>(it - names.begin()));
  }
  if (writer_of_row.empty()) fail(ErrorKind::EmptyDataset, "calibration words yielded no fragments");
  (void)corpus;

  ProfileMap out;
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const int filters = cfg.cnn.spec.blocks[static_cast<std::size_t>(layers[li] - 1)].filters;
    const int len = cfg.hog_for(layers[li]).length();
    std::vector<Eigen::MatrixXd> per_filter(static_cast<std::size_t>(filters),
                                            Eigen::MatrixXd(static_cast<Eigen::Index>(writer_of_row.size()), len));
    Eigen::Index r = 0;
    for (const auto& word : hogs)
      for (const auto& block : word[li]) {
        for (int f = 0; f < filters; ++f) per_filter[static_cast<std::size_t>(f)].row(r) = block.row(f);
        ++r;
      }
    auto profile = calibrate_layer(layers[li], per_filter, writer_of_row, cfg.calibration.params, jobs);
    profile.config_digest = cfg.profile_digest();
    std::ostringstream s;
    s << "conv" << layers[li] << ": " << profile.rows << " fragments from " << profile.writers << " writers, "
      << profile.unconverged.size() << " filters at the iteration cap"
      << (profile.uniform_fallback ? ", all filters dead: uniform weights" : "");
    say(log, s.str());
    out.emplace(layers[li], std::move(profile));
  }
  return out;
}

std::filesystem::path profile_path(const std::filesystem::path& dir, int layer) {
  return dir / ("conv" + std::to_string(layer) + ".json");
}

void save_profiles(const ProfileMap& profiles, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [l, p] : profiles) save_profile(p, profile_path(dir, l));
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
      return 2;
    case ErrorKind::MissingFile:
    case ErrorKind::UnsupportedFormat:
    case ErrorKind::CorruptImage:
    case ErrorKind::ImageTooSmall:
    case ErrorKind::BadMagic:
    case ErrorKind::CountMismatch:
    case ErrorKind::TruncatedFile:
    case ErrorKind::EmptyDataset:
    case ErrorKind::LabelOutOfRange:
    case ErrorKind::MissingImage:
    case ErrorKind::WriterWithoutTest:
    case ErrorKind::DuplicateRow:
    case ErrorKind::InsufficientGlyphs:
    case ErrorKind::NoFragments:
    case ErrorKind::EmptyValidation:
    case ErrorKind::EmptyPage:
      return 3;
    default:
      return 4;
  }
}

void check_digest(const std::string& expected, const std::string& found, const std::string& what, bool force) {
  if (expected == found || force) return;
  fail(ErrorKind::DigestMismatch, what + " was produced under a different configuration (" + found.substr(0, 12) +
                                      " vs " + expected.substr(0, 12) + "); use --force to override");
}

ProfileMap load_profiles(const std::filesystem::path& dir, const std::vector<int>& layers,
                         const std::string& config_digest, bool force) {
  ProfileMap out;
  for (int l : layers) {
    const auto path = profile_path(dir, l);
    if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, "saliency profile " + path.string());
    auto p = load_profile(path);
    if (p.layer != l) fail(ErrorKind::ProfileMismatch, path.string() + " holds layer " + std::to_string(p.layer));
    check_digest(config_digest, p.config_digest, path.string(), force);
    out.emplace(l, std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Writer models

std::pair<std::vector<int>, std::vector<int>> validation_split(const std::vector<int>& word_writer, double fraction,
                                                               std::uint64_t seed) {
  std::map<int, std::vector<int>> by_writer;
  for (int i = 0; i < static_cast<int>(word_writer.size()); ++i) by_writer[word_writer[static_cast<std::size_t>(i)]].push_back(i);
  std::vector<int> fit, val;
  for (auto& [w, idx] : by_writer) {
    std::shuffle(idx.begin(), idx.end(), std::mt19937_64(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(w + 1))));
    const int n = static_cast<int>(idx.size());
    const int nv = n < 2 ? 0 : std::clamp(static_cast<int>(std::lround(fraction * n)), 1, n - 1);
    val.insert(val.end(), idx.begin(), idx.begin() + nv);
    fit.insert(fit.end(), idx.begin() + nv, idx.end());
  }
  std::sort(fit.begin(), fit.end());
  std::sort(val.begin(), val.end());
  return {fit, val};
}

namespace {

// Rows of the chosen words (renumbered in the given order), optionally without all-zero rows.
WordSet subset(const WordSet& s, const std::vector<int>& words, bool drop_zero, int* dropped = nullptr) {
  std::vector<std::vector<Eigen::Index>> rows_of(static_cast<std::size_t>(s.words()));
  for (std::size_t r = 0; r < s.word_of_row.size(); ++r)
    rows_of[static_cast<std::size_t>(s.word_of_row[r])].push_back(static_cast<Eigen::Index>(r));
  std::vector<Eigen::Index> keep;
  WordSet out;
  for (std::size_t k = 0; k < words.size(); ++k) {
    out.word_writer.push_back(s.word_writer[static_cast<std::size_t>(words[k])]);
    for (Eigen::Index r : rows_of[static_cast<std::size_t>(words[k])]) {
      if (drop_zero && s.X.row(r).isZero(0)) {
        if (dropped) ++*dropped;
        continue;
      }
      keep.push_back(r);
      out.word_of_row.push_back(static_cast<int>(k));
    }
  }
  out.X = s.X(keep, Eigen::all);
  return out;
}

nlohmann::json grid_json(const GridChoice& g) {
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : g.cells) cells.push_back({{"C", c.C}, {"gamma", c.gamma}, {"val_top1", c.accuracy}});
  return {{"C", g.C}, {"gamma", g.gamma}, {"val_top1", g.accuracy}, {"cells", cells}};
}

}  // namespace

ModelBundle train_writer_models(const CorpusDescriptors& train, const WordCorpus& corpus, const PipelineConfig& cfg,
                                const ProfileMap& profiles, int jobs, const Logger& log) {
  const int W = static_cast<int>(corpus.writers.size());
  if (train.words.empty()) fail(ErrorKind::EmptyDataset, "no training words with fragments");
  const auto& word_writer = train.sets[0].word_writer;
  const auto [fit, val] = validation_split(word_writer, cfg.svm.validation_fraction, cfg.derived_seed("validation"));
  if (val.empty()) fail(ErrorKind::EmptyValidation, "every writer needs at least two training words");
  std::vector<int> all(word_writer.size());
  std::iota(all.begin(), all.end(), 0);

  OvaOptions base;
  base.negative_ratio = cfg.svm.negative_ratio;
  base.seed = cfg.derived_seed("negatives");
  base.tol = cfg.svm.tolerance;
  base.jobs = jobs;

  ModelBundle b;
  b.writers = corpus.writers;
  b.pooling = cfg.pooling;
  b.config_digest = cfg.digest();
  std::vector<std::vector<ScoreVector>> val_scores;
  std::vector<int> val_truth;
  for (int w : val) val_truth.push_back(word_writer[static_cast<std::size_t>(w)]);
  int excluded = 0;
  for (std::size_t li = 0; li < train.layers.size(); ++li) {
    const int layer = train.layers[li];
    const WordSet fit_set = subset(train.sets[li], fit, true), val_set = subset(train.sets[li], val, false);
    const GridChoice g = grid_search_words(fit_set, val_set, W, cfg.svm.C_grid, cfg.svm.gamma_grid, base);
    std::ostringstream s;
    s << "conv" << layer << ": grid search on " << fit_set.words() << " words (" << fit_set.X.rows()
      << " fragments), validation " << val_set.words() << " words: C=" << g.C << " gamma=" << g.gamma
      << " top-1 " << g.accuracy;
    say(log, s.str());

    LayerModels lm;
    lm.layer = layer;
    lm.C = g.C;
    lm.gamma = g.gamma;
    lm.grid = grid_json(g);
    if (cfg.pooling != Pooling::Average) lm.saliency_digest = profiles.at(layer).digest();
    OvaOptions o = base;
    o.C = g.C;
    o.gamma = g.gamma;
    if (train.layers.size() > 1)
      val_scores.push_back(word_scores(train_ova(fit_set.X, fit_set.writer_of_rows(), W, o), val_set));
    int dropped = 0;
    const WordSet full = subset(train.sets[li], all, true, &dropped);
    if (li == 0) excluded = dropped;
    lm.models = train_ova(full.X, full.writer_of_rows(), W, o);
    b.layers.push_back(std::move(lm));
  }
  nlohmann::json fusion = nullptr;
  if (val_scores.size() == 2) {
    const auto choice = select_alpha(val_scores[0], val_scores[1], val_truth, alpha_grid(cfg.alpha_step));
    b.alpha = choice.alpha;
    fusion = {{"alpha", choice.alpha}, {"val_top1", choice.accuracy}, {"curve", choice.accuracies}};
    std::ostringstream s;
    s << "fusion weight " << choice.alpha << " (validation top-1 " << choice.accuracy << ")";
    say(log, s.str());
  } else {
    b.alpha = 1;
  }
  if (excluded > 0) say(log, std::to_string(excluded) + " all-zero descriptors excluded from SVM training");
  b.meta = {{"config", cfg},
            {"train_words", train.words.size()},
            {"validation_words", val.size()},
            {"skipped_words", train.skipped.size()},
            {"zero_descriptors_excluded", excluded},
            {"fusion", fusion}};
  return b;
}

ModelBundle train_writer_models(const WordCorpus& corpus, const NetWeights<float>& net, const PipelineConfig& cfg,
                                const ProfileMap& profiles, int jobs, const Logger& log) {
  const auto words = corpus.select(Split::Train);
  const auto d = describe_corpus(words, corpus, net, cfg, cfg.layers(), cfg.pooling, profiles, jobs);
  say(log, "described " + std::to_string(d.words.size()) + " training words (" + std::to_string(d.sets[0].X.rows()) +
               " fragments, " + std::to_string(d.skipped.size()) + " words without fragments)");
  return train_writer_models(d, corpus, cfg, profiles, jobs, log);
}

// ---------------------------------------------------------------------------
// Identification

std::vector<ScoreVector> score_words(const ModelBundle& bundle, const CorpusDescriptors& d) {
  std::vector<std::vector<ScoreVector>> per_layer;
  for (const auto& lm : bundle.layers) {
    const auto it = std::find(d.layers.begin(), d.layers.end(), lm.layer);
    if (it == d.layers.end()) fail(ErrorKind::ProfileMismatch, "descriptors lack layer " + std::to_string(lm.layer));
    per_layer.push_back(word_scores(lm.models, d.sets[static_cast<std::size_t>(it - d.layers.begin())]));
  }
  if (per_layer.size() == 1) return per_layer[0];
  if (per_layer.size() != 2) fail(ErrorKind::ConfigError, "bundles fuse at most two layers");
  std::vector<ScoreVector> out;
  for (std::size_t i = 0; i < per_layer[0].size(); ++i) out.push_back(fuse(per_layer[0][i], per_layer[1][i], bundle.alpha));
  return out;
}

IdentifyReport build_report(const ModelBundle& bundle, const CorpusDescriptors& d,
                            const std::vector<ScoreVector>& scores, const std::vector<int>& group_sizes) {
  IdentifyReport rep;
  rep.writers = bundle.writers;
  rep.config_digest = bundle.config_digest;
  for (const auto* e : d.skipped) rep.skipped.push_back(e->path.string());
  std::vector<int> frag_count(d.words.size(), 0);
  for (int w : d.sets[0].word_of_row) ++frag_count[static_cast<std::size_t>(w)];

  int known = 0, hit1 = 0, hit5 = 0;
  for (std::size_t i = 0; i < d.words.size(); ++i) {
    WordResult r;
    r.path = d.words[i]->path.string();
    r.writer = d.words[i]->writer;
    r.page = d.words[i]->page;
    const auto it = std::find(bundle.writers.begin(), bundle.writers.end(), r.writer);
    r.truth = it == bundle.writers.end() ? -1 : static_cast<int>(it - bundle.writers.begin());
    r.fragments = frag_count[i];
    r.scores = scores[i];
    r.predicted = predict(r.scores);
    if (r.truth >= 0) {
      r.rank = rank_of(r.scores, r.truth);
      ++known;
      hit1 += r.rank == 1;
      hit5 += r.rank <= 5;
    }
    rep.words.push_back(std::move(r));
  }
  if (known) rep.word_top1 = double(hit1) / known, rep.word_top5 = double(hit5) / known;

  // Pages: all scored words sharing (writer, page).
  std::map<std::pair<std::string, std::string>, std::vector<std::size_t>> pages;
  for (std::size_t i = 0; i < rep.words.size(); ++i)
    if (rep.words[i].truth >= 0) pages[{rep.words[i].writer, rep.words[i].page}].push_back(i);
  auto accuracy_of = [&](const std::vector<std::vector<std::size_t>>& groups, double& top1, double& top5) {
    int h1 = 0, h5 = 0;
    for (const auto& g : groups) {
      std::vector<ScoreVector> s;
      for (std::size_t i : g) s.push_back(rep.words[i].scores);
      const int rank = rank_of(page_score(s), rep.words[g.front()].truth);
      h1 += rank == 1;
      h5 += rank <= 5;
    }
    if (!groups.empty()) top1 = double(h1) / groups.size(), top5 = double(h5) / groups.size();
  };
  std::vector<std::vector<std::size_t>> page_groups;
  for (auto& [_, g] : pages) page_groups.push_back(g);
  rep.pages = static_cast<int>(page_groups.size());
  accuracy_of(page_groups, rep.page_top1, rep.page_top5);

  // N-word groups: consecutive words of one writer, incomplete tails dropped.
  for (int n : group_sizes) {
    if (n < 1) fail(ErrorKind::ConfigError, "words per group must be >= 1");
    std::map<std::string, std::vector<std::size_t>> by_writer;
    for (std::size_t i = 0; i < rep.words.size(); ++i)
      if (rep.words[i].truth >= 0) by_writer[rep.words[i].writer].push_back(i);
    std::vector<std::vector<std::size_t>> groups;
    for (auto& [_, idx] : by_writer)
      for (std::size_t k = 0; k + static_cast<std::size_t>(n) <= idx.size(); k += static_cast<std::size_t>(n))
        groups.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(k), idx.begin() + static_cast<std::ptrdiff_t>(k + n));
    GroupAccuracy ga;
    ga.size = n;
    ga.groups = static_cast<int>(groups.size());
    accuracy_of(groups, ga.top1, ga.top5);
    rep.groups.push_back(ga);
  }
  return rep;
}

namespace {

void check_bundle(const ModelBundle& bundle, const NetWeights<float>& net, const PipelineConfig& cfg,
                  const ProfileMap& profiles, bool force) {
  check_digest(cfg.digest(), bundle.config_digest, "model bundle", force);
  check_digest(cfg.network_digest(), net.meta.config_digest, "network weights", force);
  if (bundle.pooling != cfg.pooling && !force)
    fail(ErrorKind::ConfigError, "bundle was trained with " + to_string(bundle.pooling) + " pooling, config asks for " +
                                     to_string(cfg.pooling));
  if (bundle.pooling == Pooling::Average) return;
  for (const auto& lm : bundle.layers) {
    const auto it = profiles.find(lm.layer);
    if (it == profiles.end()) fail(ErrorKind::ProfileMismatch, "no saliency profile for conv" + std::to_string(lm.layer));
    check_digest(lm.saliency_digest, it->second.digest(), "saliency profile conv" + std::to_string(lm.layer), force);
  }
}

std::vector<int> bundle_layers(const ModelBundle& bundle) {
  std::vector<int> layers;
  for (const auto& lm : bundle.layers) layers.push_back(lm.layer);
  return layers;
}

}  // namespace

IdentifyReport identify_corpus(const ModelBundle& bundle, const WordCorpus& corpus, Split split,
                               const NetWeights<float>& net, const PipelineConfig& cfg, const ProfileMap& profiles,
                               const std::vector<int>& group_sizes, int jobs, bool force) {
  check_bundle(bundle, net, cfg, profiles, force);
  const auto words = corpus.select(split);
  // Descriptors always follow the bundle's pooling so train and test never mix strategies.
  const auto d = describe_corpus(words, corpus, net, cfg, bundle_layers(bundle), bundle.pooling, profiles, jobs);
  return build_report(bundle, d, score_words(bundle, d), group_sizes);
}

ScoreVector identify_image(const ModelBundle& bundle, const GrayImage& img01, const NetWeights<float>& net,
                           const PipelineConfig& cfg, const ProfileMap& profiles) {
  const auto layers = bundle_layers(bundle);
  const auto desc = describe_word(img01, net, cfg, layers, bundle.pooling, profiles);
  if (desc[0].rows() == 0) fail(ErrorKind::NoFragments, "no usable fragments in the image");
  std::vector<ScoreVector> per_layer;
  for (std::size_t li = 0; li < layers.size(); ++li)
    per_layer.push_back(word_score(fragment_scores(bundle.layers[li].models, desc[li])));
  return per_layer.size() == 2 ? fuse(per_layer[0], per_layer[1], bundle.alpha) : per_layer[0];
}

void write_report(const IdentifyReport& rep, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "report.csv");
  if (!csv) fail(ErrorKind::MissingFile, "cannot write " + (dir / "report.csv").string());
  csv << "word_path,true_writer,predicted,rank_of_truth,top1,top2,top3,top4,top5\n";
  for (const auto& w : rep.words) {
    csv << w.path << ',' << w.writer << ',' << rep.writers[static_cast<std::size_t>(w.predicted)] << ',';
    if (w.rank > 0) csv << w.rank;
    const auto top = top_k(w.scores, 5);
    for (std::size_t k = 0; k < 5; ++k) {
      csv << ',';
      if (k < top.size()) csv << rep.writers[static_cast<std::size_t>(top[k])];
    }
    csv << '\n';
  }
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : rep.groups)
    groups.push_back({{"words_per_group", g.size}, {"groups", g.groups}, {"top1", g.top1}, {"top5", g.top5}});
  const nlohmann::json summary = {
      {"words", rep.words.size()},
      {"skipped_words", rep.skipped.size()},
      {"word_top1", rep.word_top1},
      {"word_top5", rep.word_top5},
      {"pages", rep.pages},
      {"page_top1", rep.page_top1},
      {"page_top5", rep.page_top5},
      {"word_groups", groups},
      {"writers", rep.writers.size()},
      {"config_digest", rep.config_digest},
  };
  std::ofstream(dir / "summary.json") << summary.dump(2) << '\n';
}

}  // namespace wid
