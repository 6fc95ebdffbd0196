#pragma once

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace wid {

struct SparseLoadings {
  Eigen::MatrixXd loadings;  ///< dim x L, unit-norm columns (a column may be all zero)
  double ridge = 0, lasso = 0;
  int iterations = 0;

  int components() const { return static_cast<int>(loadings.cols()); }
  /// Fraction of exactly-zero loading entries.
  double sparsity() const;
  std::vector<bool> zero_columns() const;
};

/// Sparse principal components by the regression formulation: alternating between
/// elastic-net fits of each component's response (coordinate descent on the Gram
/// matrix) and an orthogonal Procrustes update of the responses. X is centred
/// internally. `lasso` is relative: 1 zeroes a component entirely, 0 is pure ridge.
/// Columns are sign-normalised so their largest-magnitude entry is positive.
/// Throws RankDeficient when X has fewer than L non-negligible singular values and
/// NoConvergence when the loadings still move after `max_iters` alternations.
SparseLoadings sparse_pca(const Eigen::MatrixXd& X, int L, double ridge, double lasso,
                          int max_iters = 500, double tol = 1e-7);

/// Number of singular values of the centred X above 1e-6 of the largest.
int centred_rank(const Eigen::MatrixXd& X);

/// Coefficients alpha = X * V. Throws DimMismatch.
Eigen::MatrixXd project(const Eigen::MatrixXd& X, const Eigen::MatrixXd& V);

/// Per-writer, per-component normalised histograms of projection coefficients.
struct CoefficientHistograms {
  int writers = 0, components = 0, bins = 0;
  Eigen::MatrixXd prob;              ///< (writer * components + component) x bins, rows sum to 1
  std::vector<bool> degenerate;      ///< per component: constant coefficients, single bin used

  auto row(int writer, int component) const { return prob.row(writer * components + component); }
};

/// Bin edges are B equal intervals over each component's global [min, max] (right edge
/// inclusive). `writer_of_row[r]` in [0, W) groups alpha's rows; every writer needs a row.
CoefficientHistograms coefficient_histograms(const Eigen::MatrixXd& alpha,
                                             const std::vector<int>& writer_of_row, int bins);

/// Shannon entropy in bits, 0 log 0 = 0.
double entropy_bits(const Eigen::Ref<const Eigen::RowVectorXd>& p);

/// Mean entropy over all writer x component histograms.
double mean_entropy(const CoefficientHistograms& h);

/// w_f = phi_f / sum(phi). When every phi is zero returns uniform weights and sets
/// `all_zero` (if given).
std::vector<double> saliency_weights(const std::vector<double>& phi, bool* all_zero = nullptr);

struct SaliencyParams {
  int components = 8;
  int bins = 16;
  double ridge = 1e-4;
  double lasso = 0.1;
  int max_iters = 500;
  double tol = 1e-7;

  friend bool operator==(const SaliencyParams&, const SaliencyParams&) = default;
};

void to_json(nlohmann::json& j, const SaliencyParams& p);
void from_json(const nlohmann::json& j, SaliencyParams& p);

struct SaliencyProfile {
  int layer = 0;
  std::vector<double> phi;       ///< mean entropy per filter, bits
  std::vector<double> weights;   ///< sums to 1
  SaliencyParams params;
  int writers = 0;
  int rows = 0;                  ///< calibration fragments (W x N expanded)
  std::vector<int> components_used;   ///< per filter, min(L, rank); 0 for a dead filter
  std::vector<double> sparsity;       ///< per filter, fraction of zero loadings
  std::vector<int> unconverged;       ///< filters whose alternation hit max_iters
  bool uniform_fallback = false;
  std::string config_digest;

  int filters() const { return static_cast<int>(weights.size()); }
  /// SHA-256 of the canonical JSON form (digest field excluded).
  std::string digest() const;
};

void to_json(nlohmann::json& j, const SaliencyProfile& p);
void from_json(const nlohmann::json& j, SaliencyProfile& p);

/// Mean entropy of one filter's calibration HOG matrix (rows x dim), with the
/// component count reduced to the matrix rank; dead (rank 0) filters score 0.
struct FilterCalibration {
  double phi = 0;
  int components = 0;
  double sparsity = 0;
  bool converged = true;
};
FilterCalibration calibrate_filter(const Eigen::MatrixXd& hogs, const std::vector<int>& writer_of_row,
                                   const SaliencyParams& params);

/// Calibrates every filter of a layer (in parallel) and assembles the profile.
SaliencyProfile calibrate_layer(int layer, const std::vector<Eigen::MatrixXd>& hogs_per_filter,
                                const std::vector<int>& writer_of_row, const SaliencyParams& params,
                                int jobs = 1);

void save_profile(const SaliencyProfile& profile, const std::filesystem::path& path);
/// Throws FormatVersionMismatch / DigestMismatch / ProfileMismatch on malformed files.
SaliencyProfile load_profile(const std::filesystem::path& path);

}  // namespace wid
