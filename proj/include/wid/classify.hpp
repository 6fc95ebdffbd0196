#pragma once

#include "wid/pooling.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace wid {

// ---------------------------------------------------------------------------
// Binary RBF-SVM

/// Dual solution of  min 1/2 a'Qa - e'a,  0 <= a <= C,  y'a = 0,  Q_ij = y_i y_j K_ij.
struct SmoSolution {
  Eigen::VectorXd alpha;
  double rho = 0;  ///< decision(x) = sum_i y_i a_i K(x_i, x) - rho
  long iterations = 0;
  bool converged = true;
  double gap = 0;  ///< maximal KKT violation at exit
};

/// Sequential minimal optimisation with second-order working-set selection.
/// `K` is the full kernel matrix of the training rows, `y` holds +1/-1.
/// `tol` bounds the maximal KKT violation at exit; 1e-4 keeps decision values within
/// about 1e-3 of the exact optimum.
SmoSolution solve_smo(const Eigen::Ref<const Eigen::MatrixXd>& K, const std::vector<int>& y, double C,
                      double tol = 1e-4, long max_iters = 10'000'000);

/// Pairwise squared Euclidean distances between the rows of A and B.
Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

inline Eigen::MatrixXd rbf_kernel(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double gamma) {
  return (-gamma * squared_distances(A, B).array()).exp().matrix();
}

struct SvmModel {
  int writer = 0;             ///< roster index of the positive class
  Eigen::MatrixXd support;    ///< support vectors, one per row
  Eigen::VectorXd coef;       ///< y_i * a_i per support vector
  double rho = 0;
  double C = 1, gamma = 1;
  int positives = 0, negatives = 0;
  long iterations = 0;
  bool converged = true;
  std::vector<int> rows;      ///< training-row index of each support vector (not persisted)

  /// Decision values for each row of X.
  Eigen::VectorXd decisions(const Eigen::MatrixXd& X) const;
  double decision(const Eigen::VectorXd& x) const;
};

/// Trains on rows of X with labels y in {+1, -1}. Throws DegenerateKernel, SingleClass.
SvmModel train_binary(const Eigen::MatrixXd& X, const std::vector<int>& y, double C, double gamma,
                      double tol = 1e-4);

struct OvaOptions {
  double C = 1;
  double gamma = 1;
  double negative_ratio = 20;  ///< negatives per positive kept (<= 0: keep all)
  std::uint64_t seed = 0;
  double tol = 1e-4;
  int jobs = 1;
};

/// One binary SVM per writer (its rows positive, every other writer's negative).
/// `writer_of_row` holds roster indices in [0, writers).
/// Throws SingleClass (fewer than two writers, or a writer without rows) and DegenerateKernel.
std::vector<SvmModel> train_ova(const Eigen::MatrixXd& X, const std::vector<int>& writer_of_row,
                                int writers, const OvaOptions& opts);

/// As above with the training kernel matrix already computed for opts.gamma.
std::vector<SvmModel> train_ova_with_kernel(const Eigen::MatrixXd& X, const Eigen::MatrixXd& K,
                                            const std::vector<int>& writer_of_row, int writers,
                                            const OvaOptions& opts);

/// The rows a writer's model trains on, ascending: all positives plus a seeded
/// subsample of the negatives capped at ratio x positives.
std::vector<int> ova_rows(const std::vector<int>& writer_of_row, int writer, double negative_ratio,
                          std::uint64_t seed);

// ---------------------------------------------------------------------------
// Scores

using ScoreVector = Eigen::VectorXd;  ///< one entry per roster writer, each in [0, 1]

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Sigmoid-normalised decision values: rows of X by writers.
Eigen::MatrixXd fragment_scores(const std::vector<SvmModel>& models, const Eigen::MatrixXd& X);

/// Mean over fragment score rows. Throws NoFragments.
ScoreVector word_score(const Eigen::MatrixXd& fragment_scores);
/// Mean over word scores. Throws EmptyPage.
ScoreVector page_score(const std::vector<ScoreVector>& word_scores);

/// argmax, lowest index on ties.
int predict(const ScoreVector& scores);
/// 1-based rank of `truth` under the same ordering predict uses.
int rank_of(const ScoreVector& scores, int truth);
/// The k best writer indices, best first.
std::vector<int> top_k(const ScoreVector& scores, int k);

/// alpha * P1 + (1 - alpha) * P2. Throws WriterSetMismatch, ConfigError (alpha outside [0, 1]).
ScoreVector fuse(const ScoreVector& p1, const ScoreVector& p2, double alpha);

/// 0, step, ..., 1.
std::vector<double> alpha_grid(double step = 0.05);

struct AlphaChoice {
  double alpha = 0.5;
  double accuracy = 0;
  std::vector<double> accuracies;  ///< per grid point
};

/// Picks the fusion weight with the best top-1 over validation words; ties go to the
/// weight nearest 0.5 (then the smaller). Throws EmptyValidation, WriterSetMismatch.
AlphaChoice select_alpha(const std::vector<ScoreVector>& p1, const std::vector<ScoreVector>& p2,
                         const std::vector<int>& truth, const std::vector<double>& grid = alpha_grid());

struct GridCell {
  double C = 0, gamma = 0, accuracy = 0;
};

struct GridChoice {
  double C = 0, gamma = 0, accuracy = 0;
  std::vector<GridCell> cells;  ///< every evaluated pair, C-major ascending
};

/// Evaluates every (C, gamma) pair and keeps the best; ties go to the smaller C, then
/// the smaller gamma. Throws EmptyGrid.
GridChoice grid_search(std::vector<double> C_grid, std::vector<double> gamma_grid,
                       const std::function<double(double C, double gamma)>& evaluate);

/// Descriptors grouped into words.
struct WordSet {
  Eigen::MatrixXd X;             ///< one fragment descriptor per row
  std::vector<int> word_of_row;  ///< word index per row
  std::vector<int> word_writer;  ///< roster index per word

  int words() const { return static_cast<int>(word_writer.size()); }
  std::vector<int> writer_of_rows() const;
};

/// Word scores of every word in `set` (words without rows throw NoFragments).
std::vector<ScoreVector> word_scores(const std::vector<SvmModel>& models, const WordSet& set);

/// Fraction of words whose argmax is the true writer.
double top1(const std::vector<ScoreVector>& scores, const std::vector<int>& truth);
double topk(const std::vector<ScoreVector>& scores, const std::vector<int>& truth, int k);

/// Word-level grid search: trains one-vs-all models on `train` for each pair and scores
/// the words of `val`. The kernel matrices are shared across C values.
GridChoice grid_search_words(const WordSet& train, const WordSet& val, int writers,
                             const std::vector<double>& C_grid, const std::vector<double>& gamma_grid,
                             const OvaOptions& base);

// ---------------------------------------------------------------------------
// Model bundle

struct LayerModels {
  int layer = 0;
  std::string saliency_digest;
  double C = 1, gamma = 1;
  std::vector<SvmModel> models;  ///< one per roster writer, in roster order
  nlohmann::json grid;           ///< grid-search log
};

struct ModelBundle {
  std::vector<std::string> writers;
  Pooling pooling = Pooling::Post;
  std::vector<LayerModels> layers;
  double alpha = 0.5;  ///< weight of the first layer when two layers are fused
  std::string config_digest;
  nlohmann::json meta;

  const LayerModels& layer(int l) const;
};

/// Support vectors and coefficients are stored as little-endian float32.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

}  // namespace wid
