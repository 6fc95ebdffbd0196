#include "wid/saliency.hpp"

#include "wid/container.hpp"
#include "wid/error.hpp"
#include "wid/parallel.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

namespace wid {

double SparseLoadings::sparsity() const {
  if (loadings.size() == 0) return 0;
  return static_cast<double>((loadings.array() == 0.0).count()) / static_cast<double>(loadings.size());
}

std::vector<bool> SparseLoadings::zero_columns() const {
  std::vector<bool> out;
  for (Eigen::Index j = 0; j < loadings.cols(); ++j) out.push_back(loadings.col(j).isZero(0));
  return out;
}

namespace {

Eigen::MatrixXd centred_gram(const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd xc = X.rowwise() - X.colwise().mean();
  return xc.transpose() * xc;
}

// Eigen-pairs of the Gram matrix, largest first.
struct Spectrum {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  int rank = 0;
};

// `energy` is the uncentred sum of squares: centring a constant column leaves only
// rounding noise, which must not count as rank.
Spectrum spectrum(const Eigen::MatrixXd& gram, double energy) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  Spectrum s;
  s.values = eig.eigenvalues().reverse();
  s.vectors = eig.eigenvectors().rowwise().reverse();
  const double top = s.values.size() ? std::max(s.values(0), 0.0) : 0.0;
  // Singular values above 1e-6 of the largest (eigenvalues above 1e-12).
  const double floor = 1e-12 * std::max(top, 1e-12 * energy);
  for (Eigen::Index i = 0; i < s.values.size(); ++i)
    if (s.values(i) > floor && s.values(i) > 0) ++s.rank;
  return s;
}

// Elastic-net coordinate descent: minimise b'(G + ridge I)b - 2 c'b + 2 threshold |b|_1.
void elastic_net_cd(const Eigen::MatrixXd& gram, const Eigen::VectorXd& c, double ridge,
                    double threshold, Eigen::VectorXd& beta) {
  Eigen::VectorXd q = gram * beta;
  const Eigen::Index p = beta.size();
  const double scale = std::max(c.cwiseAbs().maxCoeff(), 1e-300);
  for (int sweep = 0; sweep < 200; ++sweep) {
    double moved = 0;
    for (Eigen::Index i = 0; i < p; ++i) {
      const double gii = gram(i, i);
      const double r = c(i) - (q(i) - gii * beta(i));
      double next = 0;
      if (r > threshold)
        next = (r - threshold) / (gii + ridge);
      else if (r < -threshold)
        next = (r + threshold) / (gii + ridge);
      const double delta = next - beta(i);
      if (delta != 0) {
        q += gram.col(i) * delta;
        beta(i) = next;
        moved = std::max(moved, std::abs(delta) * (gii + ridge));
      }
    }
    if (moved <= 1e-10 * scale) return;
  }
}

Eigen::VectorXd unit_or_zero(const Eigen::VectorXd& v) {
  const double n = v.norm();
  return n > 0 ? Eigen::VectorXd(v / n) : Eigen::VectorXd::Zero(v.size());
}

struct SpcaRun {
  SparseLoadings result;
  bool converged = false;
};

SpcaRun run_spca(const Eigen::MatrixXd& gram, const Spectrum& spec, int L, double ridge, double lasso,
                 int max_iters, double tol) {
  const Eigen::Index p = gram.rows();
  Eigen::MatrixXd A = spec.vectors.leftCols(L);
  Eigen::MatrixXd B = A;
  Eigen::MatrixXd normalized = Eigen::MatrixXd::Zero(p, L);
  // Fixed per-component thresholds: `lasso` = 1 is the level that zeroes the first fit.
  Eigen::VectorXd threshold(L);
  for (int j = 0; j < L; ++j) threshold(j) = lasso * (gram * A.col(j)).cwiseAbs().maxCoeff();

  SpcaRun run;
  run.result.ridge = ridge;
  run.result.lasso = lasso;
  // Penalised criterion sum_j (a_j - b_j)'G(a_j - b_j) + ridge |b_j|^2 + 2 t_j |b_j|_1,
  // relative to the total variance.
  const double variance = std::max(gram.trace(), 1e-300);
  double objective = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= max_iters; ++it) {
    double next_objective = 0;
    for (int j = 0; j < L; ++j) {
      Eigen::VectorXd beta = B.col(j);
      elastic_net_cd(gram, gram * A.col(j), ridge, threshold(j), beta);
      B.col(j) = beta;
      const Eigen::VectorXd d = A.col(j) - beta;
      next_objective += d.dot(gram * d) + ridge * beta.squaredNorm() + 2 * threshold(j) * beta.lpNorm<1>();
    }
    // Ties among duplicated inputs leave a nearly flat direction that coordinate descent
    // crawls along forever; a settled criterion counts as convergence too.
    const bool settled = std::abs(objective - next_objective) < tol * variance;
    objective = next_objective;
    Eigen::MatrixXd next(p, L);
    double change = 0;
    for (int j = 0; j < L; ++j) {
      next.col(j) = unit_or_zero(B.col(j));
      change = std::max(change, (next.col(j) - normalized.col(j)).cwiseAbs().maxCoeff());
    }
    normalized = next;
    run.result.iterations = it;
    if (it > 1 && (change < tol || settled)) {
      run.converged = true;
      break;
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram * B, Eigen::ComputeThinU | Eigen::ComputeThinV);
    A = svd.matrixU() * svd.matrixV().transpose();
  }
  for (int j = 0; j < L; ++j) {
    Eigen::Index at;
    normalized.col(j).cwiseAbs().maxCoeff(&at);
    if (normalized(at, j) < 0) normalized.col(j) *= -1;
  }
  run.result.loadings = normalized;
  return run;
}

}  // namespace

int centred_rank(const Eigen::MatrixXd& X) { return spectrum(centred_gram(X), X.squaredNorm()).rank; }

SparseLoadings sparse_pca(const Eigen::MatrixXd& X, int L, double ridge, double lasso, int max_iters,
                          double tol) {
  if (L < 1 || X.rows() < L || X.cols() < L)
    fail(ErrorKind::RankDeficient, "need at least L rows and columns for L components");
  if (ridge < 0 || lasso < 0) fail(ErrorKind::ConfigError, "penalties must be non-negative");
  const Eigen::MatrixXd gram = centred_gram(X);
  const Spectrum spec = spectrum(gram, X.squaredNorm());
  if (spec.rank < L)
    fail(ErrorKind::RankDeficient,
         "rank " + std::to_string(spec.rank) + " below " + std::to_string(L) + " components");
  auto run = run_spca(gram, spec, L, ridge, lasso, max_iters, tol);
  if (!run.converged)
    fail(ErrorKind::NoConvergence, "sparse PCA still moving after " + std::to_string(max_iters) + " iterations");
  return run.result;
}

Eigen::MatrixXd project(const Eigen::MatrixXd& X, const Eigen::MatrixXd& V) {
  if (X.cols() != V.rows())
    fail(ErrorKind::DimMismatch,
         "X has " + std::to_string(X.cols()) + " columns, loadings " + std::to_string(V.rows()) + " rows");
  return X * V;
}

CoefficientHistograms coefficient_histograms(const Eigen::MatrixXd& alpha,
                                             const std::vector<int>& writer_of_row, int bins) {
  if (bins < 2) fail(ErrorKind::ConfigError, "histograms need at least two bins");
  if (static_cast<Eigen::Index>(writer_of_row.size()) != alpha.rows())
    fail(ErrorKind::DimMismatch, "one writer label per coefficient row required");
  if (writer_of_row.empty()) fail(ErrorKind::EmptyDataset, "no coefficient rows");
  const int writers = *std::max_element(writer_of_row.begin(), writer_of_row.end()) + 1;
  if (*std::min_element(writer_of_row.begin(), writer_of_row.end()) < 0)
    fail(ErrorKind::DimMismatch, "negative writer label");

  CoefficientHistograms h;
  h.writers = writers;
  h.components = static_cast<int>(alpha.cols());
  h.bins = bins;
  h.prob = Eigen::MatrixXd::Zero(writers * h.components, bins);
  h.degenerate.assign(static_cast<std::size_t>(h.components), false);
  std::vector<int> count(static_cast<std::size_t>(writers), 0);
  for (int w : writer_of_row) ++count[static_cast<std::size_t>(w)];
  for (int w = 0; w < writers; ++w)
    if (count[static_cast<std::size_t>(w)] == 0)
      fail(ErrorKind::EmptyDataset, "writer " + std::to_string(w) + " has no calibration rows");

  for (int j = 0; j < h.components; ++j) {
    const double lo = alpha.col(j).minCoeff(), hi = alpha.col(j).maxCoeff();
    const bool flat = !(hi > lo);
    h.degenerate[static_cast<std::size_t>(j)] = flat;
    for (Eigen::Index r = 0; r < alpha.rows(); ++r) {
      int bin = 0;
      if (!flat) bin = std::min(bins - 1, static_cast<int>(std::floor((alpha(r, j) - lo) / (hi - lo) * bins)));
      h.prob(writer_of_row[static_cast<std::size_t>(r)] * h.components + j, bin) += 1;
    }
  }
  for (int w = 0; w < writers; ++w)
    h.prob.middleRows(w * h.components, h.components) /= count[static_cast<std::size_t>(w)];
  return h;
}

double entropy_bits(const Eigen::Ref<const Eigen::RowVectorXd>& p) {
  double e = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p(i) > 0) e -= p(i) * std::log2(p(i));
  return std::max(e, 0.0);
}

double mean_entropy(const CoefficientHistograms& h) {
  if (h.prob.rows() == 0) return 0;
  double sum = 0;
  for (Eigen::Index r = 0; r < h.prob.rows(); ++r) sum += entropy_bits(h.prob.row(r));
  return sum / static_cast<double>(h.prob.rows());
}

std::vector<double> saliency_weights(const std::vector<double>& phi, bool* all_zero) {
  if (phi.empty()) fail(ErrorKind::EmptyStack, "no filters to weight");
  const double total = std::accumulate(phi.begin(), phi.end(), 0.0);
  if (all_zero) *all_zero = !(total > 0);
  std::vector<double> w(phi.size(), 1.0 / static_cast<double>(phi.size()));
  if (total > 0)
    for (std::size_t f = 0; f < phi.size(); ++f) w[f] = phi[f] / total;
  return w;
}

FilterCalibration calibrate_filter(const Eigen::MatrixXd& hogs, const std::vector<int>& writer_of_row,
                                   const SaliencyParams& params) {
  FilterCalibration out;
  const Eigen::MatrixXd gram = centred_gram(hogs);
  const Spectrum spec = spectrum(gram, hogs.squaredNorm());
  out.components = std::min({params.components, spec.rank, static_cast<int>(hogs.rows())});
  if (out.components == 0) return out;  // dead filter: no variation, no information
  const auto run = run_spca(gram, spec, out.components, params.ridge, params.lasso, params.max_iters, params.tol);
  out.converged = run.converged;
  out.sparsity = run.result.sparsity();
  out.phi = mean_entropy(coefficient_histograms(project(hogs, run.result.loadings), writer_of_row, params.bins));
  return out;
}

SaliencyProfile calibrate_layer(int layer, const std::vector<Eigen::MatrixXd>& hogs_per_filter,
                                const std::vector<int>& writer_of_row, const SaliencyParams& params,
                                int jobs) {
  if (hogs_per_filter.empty()) fail(ErrorKind::EmptyStack, "no filters to calibrate");
  std::vector<FilterCalibration> results(hogs_per_filter.size());
  parallel_for(results.size(), jobs,
               [&](std::size_t f) { results[f] = calibrate_filter(hogs_per_filter[f], writer_of_row, params); });
  SaliencyProfile p;
  p.layer = layer;
  p.params = params;
  p.writers = *std::max_element(writer_of_row.begin(), writer_of_row.end()) + 1;
  p.rows = static_cast<int>(writer_of_row.size());
  for (std::size_t f = 0; f < results.size(); ++f) {
    p.phi.push_back(results[f].phi);
    p.components_used.push_back(results[f].components);
    p.sparsity.push_back(results[f].sparsity);
    if (!results[f].converged) p.unconverged.push_back(static_cast<int>(f));
  }
  p.weights = saliency_weights(p.phi, &p.uniform_fallback);
  return p;
}

void to_json(nlohmann::json& j, const SaliencyParams& p) {
  j = {{"components", p.components}, {"bins", p.bins},         {"ridge", p.ridge},
       {"lasso", p.lasso},           {"max_iters", p.max_iters}, {"tol", p.tol}};
}

void from_json(const nlohmann::json& j, SaliencyParams& p) {
  for (const auto& [key, _] : j.items())
    if (key != "components" && key != "bins" && key != "ridge" && key != "lasso" && key != "max_iters" &&
        key != "tol")
      fail(ErrorKind::ConfigError, "unknown saliency key '" + key + "'");
  p.components = j.value("components", p.components);
  p.bins = j.value("bins", p.bins);
  p.ridge = j.value("ridge", p.ridge);
  p.lasso = j.value("lasso", p.lasso);
  p.max_iters = j.value("max_iters", p.max_iters);
  p.tol = j.value("tol", p.tol);
}

void to_json(nlohmann::json& j, const SaliencyProfile& p) {
  j = {{"format", "wid-saliency"},
       {"version", 1},
       {"layer", p.layer},
       {"phi", p.phi},
       {"weights", p.weights},
       {"params", p.params},
       {"writers", p.writers},
       {"rows", p.rows},
       {"components_used", p.components_used},
       {"sparsity", p.sparsity},
       {"unconverged", p.unconverged},
       {"uniform_fallback", p.uniform_fallback},
       {"config_digest", p.config_digest}};
}

void from_json(const nlohmann::json& j, SaliencyProfile& p) {
  if (j.value("format", "") != "wid-saliency" || j.value("version", 0) != 1)
    fail(ErrorKind::FormatVersionMismatch, "not a version-1 saliency profile");
  p.layer = j.at("layer").get<int>();
  p.phi = j.at("phi").get<std::vector<double>>();
  p.weights = j.at("weights").get<std::vector<double>>();
  p.params = j.at("params").get<SaliencyParams>();
  p.writers = j.at("writers").get<int>();
  p.rows = j.at("rows").get<int>();
  p.components_used = j.at("components_used").get<std::vector<int>>();
  p.sparsity = j.at("sparsity").get<std::vector<double>>();
  p.unconverged = j.at("unconverged").get<std::vector<int>>();
  p.uniform_fallback = j.at("uniform_fallback").get<bool>();
  p.config_digest = j.at("config_digest").get<std::string>();
}

std::string SaliencyProfile::digest() const { return sha256_hex(nlohmann::json(*this).dump()); }

void save_profile(const SaliencyProfile& profile, const std::filesystem::path& path) {
  nlohmann::json j = profile;
  j["digest"] = profile.digest();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) fail(ErrorKind::MissingFile, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

SaliencyProfile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::MissingFile, path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatVersionMismatch, std::string("saliency profile: ") + e.what());
  }
  SaliencyProfile p;
  try {
    p = j.get<SaliencyProfile>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatVersionMismatch, std::string("saliency profile: ") + e.what());
  }
  if (j.value("digest", "") != p.digest()) fail(ErrorKind::DigestMismatch, "saliency profile edited or corrupt");
  if (p.weights.size() != p.phi.size() || p.weights.empty())
    fail(ErrorKind::ProfileMismatch, "phi and weights disagree");
  const double total = std::accumulate(p.weights.begin(), p.weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::ProfileMismatch, "weights do not sum to one");
  return p;
}

}  // namespace wid
