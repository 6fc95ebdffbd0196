#include "wid/classify.hpp"

#include "wid/container.hpp"
#include "wid/error.hpp"
#include "wid/imaging.hpp"
#include "wid/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace wid {

// ---------------------------------------------------------------------------
// SMO

namespace {

// SMO over the training subset `rows` of a shared kernel matrix (empty: every row).
SmoSolution smo_on_rows(const Eigen::Ref<const Eigen::MatrixXd>& K, const std::vector<int>& rows,
                        const std::vector<int>& y, double C, double tol, long max_iters) {
  const int n = static_cast<int>(y.size());
  if (!(C > 0)) fail(ErrorKind::ConfigError, "C must be positive");
  constexpr double kTau = 1e-12;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  auto index = [&](int t) { return rows.empty() ? t : rows[static_cast<std::size_t>(t)]; };
  Eigen::VectorXd diag(n);
  for (int t = 0; t < n; ++t) diag(t) = K(index(t), index(t));
  Eigen::VectorXd Ki(n), Kj(n);
  auto gather = [&](int i, Eigen::VectorXd& out) {
    const auto col = K.col(index(i));
    if (rows.empty()) out = col;
    else for (int t = 0; t < n; ++t) out(t) = col(rows[static_cast<std::size_t>(t)]);
  };

  SmoSolution s;
  s.alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd& a = s.alpha;
  Eigen::VectorXd G = Eigen::VectorXd::Constant(n, -1.0);  // gradient of the dual objective
  auto upper = [&](int t) { return a(t) >= C; };
  auto lower = [&](int t) { return a(t) <= 0; };

  s.converged = false;
  for (s.iterations = 0; s.iterations < max_iters; ++s.iterations) {
    // i: maximal violating index from the "up" set.
    double gmax = -kInf;
    int i = -1;
    for (int t = 0; t < n; ++t) {
      if (y[t] == 1) {
        if (!upper(t) && -G(t) >= gmax) gmax = -G(t), i = t;
      } else if (!lower(t) && G(t) >= gmax) {
        gmax = G(t), i = t;
      }
    }
    if (i < 0) {
      s.converged = true;
      break;
    }
    gather(i, Ki);
    // j: largest second-order decrease from the "low" set.
    double gmax2 = -kInf, best = kInf;
    int j = -1;
    for (int t = 0; t < n; ++t) {
      double diff, quad;
      if (y[t] == 1) {
        if (lower(t)) continue;
        gmax2 = std::max(gmax2, G(t));
        diff = gmax + G(t);
        quad = diag(i) + diag(t) - 2.0 * y[i] * Ki(t);
      } else {
        if (upper(t)) continue;
        gmax2 = std::max(gmax2, -G(t));
        diff = gmax - G(t);
        quad = diag(i) + diag(t) + 2.0 * y[i] * Ki(t);
      }
      if (diff > 0) {
        const double obj = -(diff * diff) / (quad > 0 ? quad : kTau);
        if (obj <= best) best = obj, j = t;
      }
    }
    s.gap = gmax + gmax2;
    if (j < 0 || s.gap < tol) {
      s.converged = true;
      break;
    }
    gather(j, Kj);

    const double ai = a(i), aj = a(j);
    if (y[i] != y[j]) {
      double quad = diag(i) + diag(j) + 2 * Ki(j);
      if (quad <= 0) quad = kTau;
      const double delta = (-G(i) - G(j)) / quad;
      const double diff = a(i) - a(j);
      a(i) += delta;
      a(j) += delta;
      if (diff > 0) {
        if (a(j) < 0) a(j) = 0, a(i) = diff;
      } else if (a(i) < 0) {
        a(i) = 0, a(j) = -diff;
      }
      if (diff > 0) {
        if (a(i) > C) a(i) = C, a(j) = C - diff;
      } else if (a(j) > C) {
        a(j) = C, a(i) = C + diff;
      }
    } else {
      double quad = diag(i) + diag(j) - 2 * Ki(j);
      if (quad <= 0) quad = kTau;
      const double delta = (G(i) - G(j)) / quad;
      const double sum = a(i) + a(j);
      a(i) -= delta;
      a(j) += delta;
      if (sum > C) {
        if (a(i) > C) a(i) = C, a(j) = sum - C;
      } else if (a(j) < 0) {
        a(j) = 0, a(i) = sum;
      }
      if (sum > C) {
        if (a(j) > C) a(j) = C, a(i) = sum - C;
      } else if (a(i) < 0) {
        a(i) = 0, a(j) = sum;
      }
    }
    const double di = y[i] * (a(i) - ai), dj = y[j] * (a(j) - aj);
    for (int t = 0; t < n; ++t) G(t) += y[t] * (Ki(t) * di + Kj(t) * dj);
  }

  // Offset: mean over free variables, else the midpoint of the feasible interval.
  double ub = kInf, lb = -kInf, sum_free = 0;
  int free = 0;
  for (int t = 0; t < n; ++t) {
    const double yg = y[t] * G(t);
    if (upper(t)) {
      if (y[t] == -1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] == 1) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++free;
      sum_free += yg;
    }
  }
  s.rho = free > 0 ? sum_free / free : (ub + lb) / 2;
  return s;
}

}  // namespace

SmoSolution solve_smo(const Eigen::Ref<const Eigen::MatrixXd>& K, const std::vector<int>& y, double C,
                      double tol, long max_iters) {
  const auto n = static_cast<Eigen::Index>(y.size());
  if (K.rows() != n || K.cols() != n) fail(ErrorKind::DimMismatch, "kernel matrix does not match labels");
  return smo_on_rows(K, {}, y, C, tol, max_iters);
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  if (A.cols() != B.cols()) fail(ErrorKind::DimMismatch, "descriptor lengths differ");
  const Eigen::VectorXd na = A.rowwise().squaredNorm(), nb = B.rowwise().squaredNorm();
  Eigen::MatrixXd d = -2.0 * A * B.transpose();
  d.colwise() += na;
  d.rowwise() += nb.transpose();
  return d.cwiseMax(0.0);
}

// ---------------------------------------------------------------------------
// Models

Eigen::VectorXd SvmModel::decisions(const Eigen::MatrixXd& X) const {
  if (support.rows() == 0) return Eigen::VectorXd::Constant(X.rows(), -rho);
  return (rbf_kernel(X, support, gamma) * coef).array() - rho;
}

double SvmModel::decision(const Eigen::VectorXd& x) const {
  return decisions(Eigen::MatrixXd(x.transpose()))(0);
}

namespace {

void check_kernel_params(double C, double gamma) {
  if (!(gamma > 0)) fail(ErrorKind::DegenerateKernel, "gamma must be positive");
  if (!(C > 0)) fail(ErrorKind::ConfigError, "C must be positive");
}

SvmModel fit_subset(const Eigen::MatrixXd& X, const Eigen::MatrixXd& K, const std::vector<int>& rows,
                    const std::vector<int>& y, double C, double gamma, double tol) {
  bool identity = static_cast<Eigen::Index>(rows.size()) == K.rows();
  for (std::size_t t = 0; identity && t < rows.size(); ++t) identity = rows[t] == static_cast<int>(t);
  const SmoSolution sol = smo_on_rows(K, identity ? std::vector<int>{} : rows, y, C, tol, 10'000'000);
  SvmModel m;
  m.C = C;
  m.gamma = gamma;
  m.rho = sol.rho;
  m.iterations = sol.iterations;
  m.converged = sol.converged;
  for (int v : y) (v == 1 ? m.positives : m.negatives)++;
  std::vector<int> sv;
  for (int t = 0; t < static_cast<int>(rows.size()); ++t)
    if (sol.alpha(t) > 0) sv.push_back(t);
  m.support.resize(static_cast<Eigen::Index>(sv.size()), X.cols());
  m.coef.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t k = 0; k < sv.size(); ++k) {
    m.rows.push_back(rows[sv[k]]);
    m.support.row(static_cast<Eigen::Index>(k)) = X.row(rows[sv[k]]);
    m.coef(static_cast<Eigen::Index>(k)) = y[sv[k]] * sol.alpha(sv[k]);
  }
  return m;
}

}  // namespace

SvmModel train_binary(const Eigen::MatrixXd& X, const std::vector<int>& y, double C, double gamma,
                      double tol) {
  check_kernel_params(C, gamma);
  if (static_cast<Eigen::Index>(y.size()) != X.rows()) fail(ErrorKind::DimMismatch, "one label per row");
  const bool pos = std::find(y.begin(), y.end(), 1) != y.end();
  const bool neg = std::find(y.begin(), y.end(), -1) != y.end();
  if (!pos || !neg) fail(ErrorKind::SingleClass, "binary SVM needs both classes");
  std::vector<int> rows(y.size());
  std::iota(rows.begin(), rows.end(), 0);
  return fit_subset(X, rbf_kernel(X, X, gamma), rows, y, C, gamma, tol);
}

std::vector<int> ova_rows(const std::vector<int>& writer_of_row, int writer, double negative_ratio,
                          std::uint64_t seed) {
  std::vector<int> pos, neg;
  for (int r = 0; r < static_cast<int>(writer_of_row.size()); ++r)
    (writer_of_row[r] == writer ? pos : neg).push_back(r);
  if (negative_ratio > 0) {
    const auto cap = static_cast<std::size_t>(std::floor(negative_ratio * static_cast<double>(pos.size())));
    if (neg.size() > cap) {
      std::vector<int> kept;
      std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(writer + 1)));
      std::sample(neg.begin(), neg.end(), std::back_inserter(kept), cap, rng);
      neg = std::move(kept);
    }
  }
  std::vector<int> rows;
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(rows));
  return rows;
}

std::vector<SvmModel> train_ova_with_kernel(const Eigen::MatrixXd& X, const Eigen::MatrixXd& K,
                                            const std::vector<int>& writer_of_row, int writers,
                                            const OvaOptions& opts) {
  check_kernel_params(opts.C, opts.gamma);
  if (writers < 2) fail(ErrorKind::SingleClass, "one-vs-all needs at least two writers");
  if (static_cast<Eigen::Index>(writer_of_row.size()) != X.rows() || K.rows() != X.rows() || K.cols() != X.rows())
    fail(ErrorKind::DimMismatch, "rows, labels and kernel disagree");
  std::vector<int> count(writers, 0);
  for (int w : writer_of_row) {
    if (w < 0 || w >= writers) fail(ErrorKind::LabelOutOfRange, "writer index out of range");
    ++count[w];
  }
  for (int w = 0; w < writers; ++w)
    if (count[w] == 0) fail(ErrorKind::SingleClass, "writer " + std::to_string(w) + " has no training rows");

  std::vector<SvmModel> models(writers);
  parallel_for(static_cast<std::size_t>(writers), opts.jobs, [&](std::size_t w) {
    const int wi = static_cast<int>(w);
    const auto rows = ova_rows(writer_of_row, wi, opts.negative_ratio, opts.seed);
    std::vector<int> y(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) y[k] = writer_of_row[rows[k]] == wi ? 1 : -1;
    models[w] = fit_subset(X, K, rows, y, opts.C, opts.gamma, opts.tol);
    models[w].writer = wi;
  });
  return models;
}

std::vector<SvmModel> train_ova(const Eigen::MatrixXd& X, const std::vector<int>& writer_of_row, int writers,
                                const OvaOptions& opts) {
  check_kernel_params(opts.C, opts.gamma);
  return train_ova_with_kernel(X, rbf_kernel(X, X, opts.gamma), writer_of_row, writers, opts);
}

// ---------------------------------------------------------------------------
// Scores

Eigen::MatrixXd fragment_scores(const std::vector<SvmModel>& models, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(models.size()));
  for (std::size_t w = 0; w < models.size(); ++w)
    out.col(static_cast<Eigen::Index>(w)) = models[w].decisions(X).unaryExpr([](double v) { return sigmoid(v); });
  return out;
}

ScoreVector word_score(const Eigen::MatrixXd& fragment_scores) {
  if (fragment_scores.rows() == 0) fail(ErrorKind::NoFragments, "word has no usable fragments");
  return fragment_scores.colwise().mean().transpose();
}

ScoreVector page_score(const std::vector<ScoreVector>& word_scores) {
  if (word_scores.empty()) fail(ErrorKind::EmptyPage, "page has no scored words");
  ScoreVector sum = ScoreVector::Zero(word_scores.front().size());
  for (const auto& s : word_scores) {
    if (s.size() != sum.size()) fail(ErrorKind::WriterSetMismatch, "word scores cover different writers");
    sum += s;
  }
  return sum / static_cast<double>(word_scores.size());
}

int predict(const ScoreVector& scores) {
  int best = 0;
  for (int w = 1; w < scores.size(); ++w)
    if (scores(w) > scores(best)) best = w;
  return best;
}

int rank_of(const ScoreVector& scores, int truth) {
  int rank = 1;
  for (int w = 0; w < scores.size(); ++w)
    if (scores(w) > scores(truth) || (scores(w) == scores(truth) && w < truth)) ++rank;
  return rank;
}

std::vector<int> top_k(const ScoreVector& scores, int k) {
  std::vector<int> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores(a) > scores(b); });
  idx.resize(std::min<std::size_t>(idx.size(), static_cast<std::size_t>(std::max(k, 0))));
  return idx;
}

ScoreVector fuse(const ScoreVector& p1, const ScoreVector& p2, double alpha) {
  if (p1.size() != p2.size()) fail(ErrorKind::WriterSetMismatch, "fused scores cover different writers");
  if (!(alpha >= 0 && alpha <= 1)) fail(ErrorKind::ConfigError, "fusion weight must lie in [0, 1]");
  return alpha * p1 + (1 - alpha) * p2;
}

std::vector<double> alpha_grid(double step) {
  if (!(step > 0 && step <= 1)) fail(ErrorKind::ConfigError, "alpha step must lie in (0, 1]");
  const int n = static_cast<int>(std::llround(1.0 / step));
  std::vector<double> g;
  for (int i = 0; i <= n; ++i) g.push_back(std::min(1.0, i * step));
  if (g.back() < 1) g.push_back(1);
  return g;
}

double top1(const std::vector<ScoreVector>& scores, const std::vector<int>& truth) {
  return topk(scores, truth, 1);
}

double topk(const std::vector<ScoreVector>& scores, const std::vector<int>& truth, int k) {
  if (scores.size() != truth.size()) fail(ErrorKind::DimMismatch, "one truth label per score vector");
  if (scores.empty()) return 0;
  int hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) hits += rank_of(scores[i], truth[i]) <= k;
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

AlphaChoice select_alpha(const std::vector<ScoreVector>& p1, const std::vector<ScoreVector>& p2,
                         const std::vector<int>& truth, const std::vector<double>& grid) {
  if (p1.empty() || truth.empty()) fail(ErrorKind::EmptyValidation, "no validation words");
  if (p1.size() != p2.size() || p1.size() != truth.size())
    fail(ErrorKind::WriterSetMismatch, "validation score lists differ in length");
  if (grid.empty()) fail(ErrorKind::EmptyGrid, "empty fusion grid");
  AlphaChoice c;
  int best = -1;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    int hits = 0;
    for (std::size_t i = 0; i < p1.size(); ++i) hits += predict(fuse(p1[i], p2[i], grid[g])) == truth[i];
    const double acc = static_cast<double>(hits) / static_cast<double>(p1.size());
    c.accuracies.push_back(acc);
    const auto closer = [&](double a, double b) {
      const double da = std::abs(a - 0.5), db = std::abs(b - 0.5);
      return da < db - 1e-12 || (std::abs(da - db) <= 1e-12 && a < b);
    };
    if (best < 0 || acc > c.accuracy || (acc == c.accuracy && closer(grid[g], c.alpha))) {
      best = static_cast<int>(g);
      c.accuracy = acc;
      c.alpha = grid[g];
    }
  }
  return c;
}

GridChoice grid_search(std::vector<double> C_grid, std::vector<double> gamma_grid,
                       const std::function<double(double, double)>& evaluate) {
  if (C_grid.empty() || gamma_grid.empty()) fail(ErrorKind::EmptyGrid, "empty C or gamma grid");
  std::sort(C_grid.begin(), C_grid.end());
  std::sort(gamma_grid.begin(), gamma_grid.end());
  GridChoice best;
  bool first = true;
  for (double C : C_grid)
    for (double g : gamma_grid) {
      const double acc = evaluate(C, g);
      best.cells.push_back({C, g, acc});
      if (first || acc > best.accuracy) {
        best.C = C;
        best.gamma = g;
        best.accuracy = acc;
        first = false;
      }
    }
  return best;
}

std::vector<int> WordSet::writer_of_rows() const {
  std::vector<int> out(word_of_row.size());
  for (std::size_t r = 0; r < word_of_row.size(); ++r) out[r] = word_writer.at(static_cast<std::size_t>(word_of_row[r]));
  return out;
}

namespace {

std::vector<ScoreVector> average_by_word(const Eigen::MatrixXd& frag, const WordSet& set) {
  const int W = static_cast<int>(frag.cols());
  std::vector<ScoreVector> sum(static_cast<std::size_t>(set.words()), ScoreVector::Zero(W));
  std::vector<int> count(static_cast<std::size_t>(set.words()), 0);
  for (std::size_t r = 0; r < set.word_of_row.size(); ++r) {
    sum[static_cast<std::size_t>(set.word_of_row[r])] += frag.row(static_cast<Eigen::Index>(r)).transpose();
    ++count[static_cast<std::size_t>(set.word_of_row[r])];
  }
  for (std::size_t w = 0; w < sum.size(); ++w) {
    if (count[w] == 0) fail(ErrorKind::NoFragments, "word " + std::to_string(w) + " has no fragments");
    sum[w] /= count[w];
  }
  return sum;
}

}  // namespace

std::vector<ScoreVector> word_scores(const std::vector<SvmModel>& models, const WordSet& set) {
  return average_by_word(fragment_scores(models, set.X), set);
}

GridChoice grid_search_words(const WordSet& train, const WordSet& val, int writers,
                             const std::vector<double>& C_grid, const std::vector<double>& gamma_grid,
                             const OvaOptions& base) {
  if (val.words() == 0) fail(ErrorKind::EmptyValidation, "no validation words");
  const Eigen::MatrixXd d_train = squared_distances(train.X, train.X);
  const Eigen::MatrixXd d_val = squared_distances(val.X, train.X);
  const auto labels = train.writer_of_rows();

  // Kernels are cached for the gamma currently being evaluated.
  double cached_gamma = -1;
  Eigen::MatrixXd K, Kval;
  auto evaluate = [&](double C, double gamma) {
    if (gamma != cached_gamma) {
      if (!(gamma > 0)) fail(ErrorKind::DegenerateKernel, "gamma must be positive");
      K = (-gamma * d_train.array()).exp().matrix();
      Kval = (-gamma * d_val.array()).exp().matrix();
      cached_gamma = gamma;
    }
    OvaOptions o = base;
    o.C = C;
    o.gamma = gamma;
    const auto models = train_ova_with_kernel(train.X, K, labels, writers, o);
    Eigen::MatrixXd frag(val.X.rows(), writers);
    for (int w = 0; w < writers; ++w) {
      const auto& m = models[static_cast<std::size_t>(w)];
      Eigen::VectorXd dv = Eigen::VectorXd::Constant(val.X.rows(), -m.rho);
      if (!m.rows.empty()) dv += Kval(Eigen::all, m.rows) * m.coef;
      frag.col(w) = dv.unaryExpr([](double v) { return sigmoid(v); });
    }
    return top1(average_by_word(frag, val), val.word_writer);
  };
  // Loop gamma-outer so each kernel is built once, then report C-major.
  std::vector<double> Cs = C_grid, gs = gamma_grid;
  if (Cs.empty() || gs.empty()) fail(ErrorKind::EmptyGrid, "empty C or gamma grid");
  std::sort(Cs.begin(), Cs.end());
  std::sort(gs.begin(), gs.end());
  std::vector<std::vector<double>> acc(Cs.size(), std::vector<double>(gs.size()));
  for (std::size_t g = 0; g < gs.size(); ++g)
    for (std::size_t c = 0; c < Cs.size(); ++c) acc[c][g] = evaluate(Cs[c], gs[g]);
  return grid_search(Cs, gs, [&](double C, double gamma) {
    const auto c = static_cast<std::size_t>(std::find(Cs.begin(), Cs.end(), C) - Cs.begin());
    const auto g = static_cast<std::size_t>(std::find(gs.begin(), gs.end(), gamma) - gs.begin());
    return acc[c][g];
  });
}

// ---------------------------------------------------------------------------
// Bundle

namespace {
constexpr std::string_view kBundleMagic = "SIDM0001";
}

const LayerModels& ModelBundle::layer(int l) const {
  for (const auto& m : layers)
    if (m.layer == l) return m;
  fail(ErrorKind::ProfileMismatch, "bundle has no models for layer " + std::to_string(l));
}

void save_bundle(const ModelBundle& b, const std::filesystem::path& path) {
  nlohmann::json layers = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& l : b.layers) {
    if (l.models.size() != b.writers.size()) fail(ErrorKind::WriterSetMismatch, "one model per writer required");
    nlohmann::json models = nlohmann::json::array();
    for (const auto& m : l.models) {
      models.push_back({{"writer", m.writer},
                        {"support", m.support.rows()},
                        {"dim", m.support.cols()},
                        {"rho", m.rho},
                        {"positives", m.positives},
                        {"negatives", m.negatives},
                        {"iterations", m.iterations},
                        {"converged", m.converged}});
      const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sv = m.support.cast<float>();
      const Eigen::VectorXf coef = m.coef.cast<float>();
      append_f32(payload, std::span<const float>(sv.data(), static_cast<std::size_t>(sv.size())));
      append_f32(payload, std::span<const float>(coef.data(), static_cast<std::size_t>(coef.size())));
    }
    layers.push_back({{"layer", l.layer},
                      {"saliency_digest", l.saliency_digest},
                      {"C", l.C},
                      {"gamma", l.gamma},
                      {"grid", l.grid},
                      {"models", models}});
  }
  const nlohmann::json header = {{"format", "wid-models"},       {"version", 1},
                                 {"writers", b.writers},         {"pooling", to_string(b.pooling)},
                                 {"alpha", b.alpha},             {"config_digest", b.config_digest},
                                 {"meta", b.meta},               {"layers", layers}};
  write_container(path, kBundleMagic, header, payload);
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::MissingFile, path.string());
  const auto bytes = read_file_bytes(path);
  auto payload_size = [](const nlohmann::json& h) -> std::size_t {
    if (h.value("format", "") != "wid-models" || h.value("version", 0) != 1)
      fail(ErrorKind::FormatVersionMismatch, "unsupported model bundle version");
    std::size_t total = 0;
    try {
      for (const auto& l : h.at("layers"))
        for (const auto& m : l.at("models"))
          total += 4 * m.at("support").get<std::size_t>() * (m.at("dim").get<std::size_t>() + 1);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::FormatVersionMismatch, e.what());
    }
    return total;
  };
  const Container c = decode_container(bytes, kBundleMagic, payload_size);
  ModelBundle b;
  try {
    const auto& h = c.header;
    b.writers = h.at("writers").get<std::vector<std::string>>();
    b.pooling = parse_pooling(h.at("pooling").get<std::string>());
    b.alpha = h.at("alpha").get<double>();
    b.config_digest = h.at("config_digest").get<std::string>();
    b.meta = h.value("meta", nlohmann::json::object());
    std::size_t offset = 0;
    for (const auto& lj : h.at("layers")) {
      LayerModels l;
      l.layer = lj.at("layer").get<int>();
      l.saliency_digest = lj.at("saliency_digest").get<std::string>();
      l.C = lj.at("C").get<double>();
      l.gamma = lj.at("gamma").get<double>();
      l.grid = lj.value("grid", nlohmann::json());
      for (const auto& mj : lj.at("models")) {
        SvmModel m;
        m.writer = mj.at("writer").get<int>();
        m.rho = mj.at("rho").get<double>();
        m.positives = mj.at("positives").get<int>();
        m.negatives = mj.at("negatives").get<int>();
        m.iterations = mj.at("iterations").get<long>();
        m.converged = mj.at("converged").get<bool>();
        m.C = l.C;
        m.gamma = l.gamma;
        const auto n = mj.at("support").get<Eigen::Index>(), d = mj.at("dim").get<Eigen::Index>();
        Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> sv(n, d);
        Eigen::VectorXf coef(n);
        read_f32(c.payload, offset, std::span<float>(sv.data(), static_cast<std::size_t>(sv.size())));
        read_f32(c.payload, offset, std::span<float>(coef.data(), static_cast<std::size_t>(coef.size())));
        m.support = sv.cast<double>();
        m.coef = coef.cast<double>();
        l.models.push_back(std::move(m));
      }
      if (l.models.size() != b.writers.size()) fail(ErrorKind::WriterSetMismatch, "one model per writer required");
      b.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::FormatVersionMismatch, e.what());
  }
  return b;
}

}  // namespace wid
