#pragma once

#include "wid/classify.hpp"
#include "wid/config.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace wid {

using Logger = std::function<void(const std::string&)>;

// ---------------------------------------------------------------------------
// Fragments and descriptors

/// Keypoint fragments of one word image ([0,1], dark ink on white), in detection
/// order. With a cap, the strongest |response| fragments are kept (ties: detection order).
std::vector<Fragment> word_fragments(const GrayImage& img01, const FragmentConfig& cfg);

/// Network input for a fragment: ink-bright float grid, as the letter images are.
Grid<float> network_input(const Fragment& fragment);

using ProfileMap = std::map<int, SaliencyProfile>;

/// Pooled descriptors of every fragment of one word, one matrix (fragments x length)
/// per requested layer. Average pooling ignores `profiles`.
std::vector<Eigen::MatrixXd> describe_word(const GrayImage& img01, const NetWeights<float>& net,
                                           const PipelineConfig& cfg, const std::vector<int>& layers,
                                           Pooling pooling, const ProfileMap& profiles);

/// Descriptors of a list of corpus words for the given layers.
struct CorpusDescriptors {
  std::vector<int> layers;
  std::vector<const CorpusEntry*> words;     ///< words with at least one fragment
  std::vector<const CorpusEntry*> skipped;   ///< words without usable fragments
  std::vector<WordSet> sets;                 ///< per layer; word index = position in `words`
  int zero_rows = 0;                         ///< all-zero descriptors (first layer)
};

CorpusDescriptors describe_corpus(const std::vector<const CorpusEntry*>& words, const WordCorpus& corpus,
                                  const NetWeights<float>& net, const PipelineConfig& cfg,
                                  const std::vector<int>& layers, Pooling pooling, const ProfileMap& profiles,
                                  int jobs);

// ---------------------------------------------------------------------------
// Stages

/// Letter images for CNN training: EMNIST when configured, otherwise procedural glyphs.
struct LetterData {
  LabeledImages train, val;
  std::string source;
};
LetterData load_letter_data(const PipelineConfig& cfg);

/// Trains the network and stamps the config digest into its metadata.
TrainResult train_network(const PipelineConfig& cfg, const LetterData& data, const Logger& log = {});

/// First min(W, roster) writers, first N training words of each.
std::vector<const CorpusEntry*> calibration_words(const WordCorpus& corpus, int writers, int words_per_writer);

/// One saliency profile per layer from the calibration words' per-filter HOGs.
ProfileMap calibrate_profiles(const std::vector<const CorpusEntry*>& words, const WordCorpus& corpus,
                              const NetWeights<float>& net, const PipelineConfig& cfg,
                              const std::vector<int>& layers, int jobs, const Logger& log = {});

std::filesystem::path profile_path(const std::filesystem::path& dir, int layer);
void save_profiles(const ProfileMap& profiles, const std::filesystem::path& dir);
/// Loads conv<k>.json for each layer; unless `force`, refuses a config digest mismatch.
ProfileMap load_profiles(const std::filesystem::path& dir, const std::vector<int>& layers,
                         const std::string& config_digest, bool force);

/// Splits each writer's words into (fit, validation) with a seeded shuffle; at least one
/// word on each side when the writer has two or more.
std::pair<std::vector<int>, std::vector<int>> validation_split(const std::vector<int>& word_writer, double fraction,
                                                               std::uint64_t seed);

/// Grid search and fusion-weight selection on held-out training words, then a final
/// fit on all training words.
ModelBundle train_writer_models(const WordCorpus& corpus, const NetWeights<float>& net, const PipelineConfig& cfg,
                                const ProfileMap& profiles, int jobs, const Logger& log = {});

/// Same, from descriptors already computed for the training split.
ModelBundle train_writer_models(const CorpusDescriptors& train, const WordCorpus& corpus, const PipelineConfig& cfg,
                                const ProfileMap& profiles, int jobs, const Logger& log = {});

// ---------------------------------------------------------------------------
// Identification

struct WordResult {
  std::string path;
  std::string writer;  ///< true writer (empty if unknown)
  std::string page;
  int truth = -1;      ///< roster index or -1
  int fragments = 0;
  ScoreVector scores;  ///< final (fused) word score
  int predicted = 0;
  int rank = 0;        ///< rank of the true writer, 0 if unknown
};

struct GroupAccuracy {
  int size = 0;  ///< words per group
  int groups = 0;
  double top1 = 0, top5 = 0;
};

struct IdentifyReport {
  std::vector<std::string> writers;
  std::vector<WordResult> words;
  std::vector<std::string> skipped;  ///< words without fragments
  double word_top1 = 0, word_top5 = 0;
  int pages = 0;
  double page_top1 = 0, page_top5 = 0;
  std::vector<GroupAccuracy> groups;  ///< multi-word groups (words_per_writer)
  std::string config_digest;
};

/// Scores every word of `descriptors` with the bundle (fusing two layers with the bundle's alpha).
std::vector<ScoreVector> score_words(const ModelBundle& bundle, const CorpusDescriptors& descriptors);

/// Word, page and (optionally) N-word-group accuracies for scored test words.
IdentifyReport build_report(const ModelBundle& bundle, const CorpusDescriptors& descriptors,
                            const std::vector<ScoreVector>& scores, const std::vector<int>& group_sizes);

/// Full identification of a corpus split. Unless `force`, refuses a bundle or network
/// whose config digest differs from `cfg`.
IdentifyReport identify_corpus(const ModelBundle& bundle, const WordCorpus& corpus, Split split,
                               const NetWeights<float>& net, const PipelineConfig& cfg, const ProfileMap& profiles,
                               const std::vector<int>& group_sizes, int jobs, bool force);

/// Scores of one word image; throws NoFragments when nothing is detected.
ScoreVector identify_image(const ModelBundle& bundle, const GrayImage& img01, const NetWeights<float>& net,
                           const PipelineConfig& cfg, const ProfileMap& profiles);

/// report.csv (word_path, true_writer, predicted, rank_of_truth, top1..top5) and summary.json.
void write_report(const IdentifyReport& report, const std::filesystem::path& dir);

/// Process exit status for an error: 2 configuration, 3 input data, 4 model files or fitting.
int exit_code(ErrorKind kind);

/// Throws DigestMismatch unless the digests agree or `force` is set.
void check_digest(const std::string& expected, const std::string& found, const std::string& what, bool force);

}  // namespace wid
