#pragma once
// Independent reference computations shared by the unit tests and the acceptance run.

#include "wid/convnet.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace wid::oracle {

struct Toy {
  Eigen::MatrixXd X;
  std::vector<int> y;
};

// Two noisy 2-D blobs (optionally overlapping) of n points in total.
inline Toy toy_set(int n, std::uint64_t seed, double separation) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0, 1);
  Toy t;
  t.X.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const int label = i % 2 ? 1 : -1;
    t.y.push_back(label);
    t.X(i, 0) = g(rng) + label * separation / 2;
    t.X(i, 1) = g(rng) - label * separation / 4;
  }
  return t;
}

inline Eigen::MatrixXd probe_points() {
  Eigen::MatrixXd P(49, 2);
  int k = 0;
  for (int i = -3; i <= 3; ++i)
    for (int j = -3; j <= 3; ++j) P.row(k++) << i, j;
  return P;
}

inline Eigen::MatrixXd gaussian_kernel(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double gamma) {
  Eigen::MatrixXd K(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j) K(i, j) = std::exp(-gamma * (A.row(i) - B.row(j)).squaredNorm());
  return K;
}

// Reference dual solver: primal-dual interior point on
//   min 1/2 a'Qa - e'a  s.t.  0 <= a <= C,  y'a = 0
// driven to machine-level KKT residuals. Returns (alpha, offset) with
// decision(x) = sum_i y_i a_i K(x_i, x) + offset.
inline std::pair<Eigen::VectorXd, double> interior_point_svm(const Eigen::MatrixXd& K, const std::vector<int>& labels,
                                                             double C) {
  const int n = static_cast<int>(labels.size());
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = labels[static_cast<std::size_t>(i)];
  const Eigen::MatrixXd Q = y.asDiagonal() * K * y.asDiagonal();
  Eigen::VectorXd a = Eigen::VectorXd::Constant(n, C / 2), z = Eigen::VectorXd::Ones(n),
                  s = Eigen::VectorXd::Ones(n);
  double nu = 0;
  for (int it = 0; it < 200; ++it) {
    const Eigen::VectorXd slack = (C - a.array()).matrix();
    const double gap = (a.dot(z) + slack.dot(s)) / (2 * n);
    const Eigen::VectorXd rd = Q * a - Eigen::VectorXd::Ones(n) + y * nu - z + s;
    const double rp = y.dot(a);
    if (gap < 1e-11 && rd.lpNorm<Eigen::Infinity>() < 1e-10 && std::abs(rp) < 1e-10) break;
    const double mu = 0.1 * gap;
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + 1, n + 1);
    M.topLeftCorner(n, n) = Q;
    M.topLeftCorner(n, n).diagonal() += (z.array() / a.array() + s.array() / slack.array()).matrix();
    M.topRightCorner(n, 1) = y;
    M.bottomLeftCorner(1, n) = y.transpose();
    Eigen::VectorXd rhs(n + 1);
    rhs.head(n) = -rd + (mu / a.array() - z.array() - mu / slack.array() + s.array()).matrix();
    rhs(n) = -rp;
    const Eigen::VectorXd step = M.fullPivLu().solve(rhs);
    const Eigen::VectorXd da = step.head(n);
    const Eigen::VectorXd dz = (mu / a.array() - z.array() - z.array() / a.array() * da.array()).matrix();
    const Eigen::VectorXd ds = (mu / slack.array() - s.array() + s.array() / slack.array() * da.array()).matrix();
    double t = 1;
    for (int i = 0; i < n; ++i) {
      if (da(i) < 0) t = std::min(t, -0.99 * a(i) / da(i));
      if (da(i) > 0) t = std::min(t, 0.99 * slack(i) / da(i));
      if (dz(i) < 0) t = std::min(t, -0.99 * z(i) / dz(i));
      if (ds(i) < 0) t = std::min(t, -0.99 * s(i) / ds(i));
    }
    a += t * da;
    z += t * dz;
    s += t * ds;
    nu += t * step(n);
  }
  if (!a.allFinite() || !std::isfinite(nu)) throw std::runtime_error("oracle diverged");
  return {a, nu};
}

/// Oracle decision values of the reference solver at `probes`.
inline Eigen::VectorXd oracle_decisions(const Toy& t, double C, double gamma, const Eigen::MatrixXd& probes) {
  const auto [alpha, offset] = interior_point_svm(gaussian_kernel(t.X, t.X, gamma), t.y, C);
  Eigen::VectorXd coef(t.X.rows());
  for (Eigen::Index i = 0; i < coef.size(); ++i) coef(i) = t.y[static_cast<std::size_t>(i)] * alpha(i);
  return (gaussian_kernel(probes, t.X, gamma) * coef).array() + offset;
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Right singular vectors of the centred matrix.
inline Eigen::MatrixXd svd_loadings(const Eigen::MatrixXd& X, int L) {
  const Eigen::MatrixXd xc = X.rowwise() - X.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(xc, Eigen::ComputeThinV);
  return svd.matrixV().leftCols(L);
}

struct GradientCheck {
  std::vector<std::string> groups;
  std::vector<double> worst;  ///< per parameter group, relative error
  std::vector<int> clean;     ///< probes away from ReLU kinks, per group
  int discarded = 0, probes = 0;
  double max_error() const { return worst.empty() ? 0 : *std::max_element(worst.begin(), worst.end()); }
};

// Central finite differences of the batch loss against the analytic gradients, on a
// perturbed double-precision network and a 3-image batch. Probes whose +/- perturbation
// flips any ReLU are discarded: the finite difference is meaningless across a kink.
inline GradientCheck gradient_check(std::uint64_t seed = 21, int side = 9, int probes_per_group = 6) {
  auto w = NetWeights<double>::initialize(ConvSpec{}, seed);
  std::mt19937_64 rng(seed + 56);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& blk : w.blocks) {
    for (Eigen::Index i = 0; i < blk.gamma.size(); ++i) {
      blk.gamma[i] = 1 + u(rng);
      blk.beta[i] = u(rng);
      blk.bias[i] = 0.1 * u(rng);
    }
  }
  for (Eigen::Index i = 0; i < w.head_bias.size(); ++i) w.head_bias[i] = u(rng);

  Mat<double> images(3, side * side);
  std::uniform_real_distribution<double> px(0, 1);
  for (Eigen::Index i = 0; i < images.size(); ++i) images.data()[i] = px(rng);
  const std::vector<int> labels = {3, 17, 25};

  NetWeights<double> grads;
  loss_and_gradients<double>(w, images, side, side, labels, &grads);
  auto params = parameters(w);
  auto gparams = parameters(grads);

  const double eps = 1e-4;
  GradientCheck out;
  for (std::size_t t = 0; t < params.size(); ++t) {
    std::uniform_int_distribution<Eigen::Index> pick(0, params[t].size - 1);
    double group_worst = 0;
    int clean = 0;
    for (int attempt = 0; attempt < 10 * probes_per_group && clean < probes_per_group; ++attempt) {
      const Eigen::Index i = pick(rng);
      double& p = params[t].data[i];
      const double saved = p;
      p = saved + eps;
      const double up = loss_and_gradients<double>(w, images, side, side, labels, nullptr);
      const auto pattern_up = relu_pattern<double>(w, images, side, side);
      p = saved - eps;
      const double down = loss_and_gradients<double>(w, images, side, side, labels, nullptr);
      const auto pattern_down = relu_pattern<double>(w, images, side, side);
      p = saved;
      ++out.probes;
      if (pattern_up != pattern_down) {
        ++out.discarded;
        continue;
      }
      ++clean;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = gparams[t].data[i];
      const double rel = std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-6});
      group_worst = std::max(group_worst, rel);
    }
    out.groups.push_back(params[t].name);
    out.worst.push_back(group_worst);
    out.clean.push_back(clean);
  }
  return out;
}

// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = (static_cast<double>(i + j) / 2) + 1;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const Eigen::Map<const Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size())),
      y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Eigen::VectorXd xc = x.array() - x.mean(), yc = y.array() - y.mean();
  const double den = xc.norm() * yc.norm();
  return den > 0 ? xc.dot(yc) / den : 0;
}

}  // namespace wid::oracle
