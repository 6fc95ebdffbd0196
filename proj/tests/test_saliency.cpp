#include "wid/error.hpp"
#include "wid/saliency.hpp"

#include <doctest.h>

#include "oracles.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <fstream>
#include <random>

using namespace wid;
using namespace wid::oracle;
namespace fs = std::filesystem;

namespace {

// Oracle: histogram entropy computed directly from sorted coefficient values.
double oracle_mean_entropy(const Eigen::MatrixXd& alpha, const std::vector<int>& writer, int W, int B) {
  double total = 0;
  for (Eigen::Index j = 0; j < alpha.cols(); ++j) {
    const double lo = alpha.col(j).minCoeff(), hi = alpha.col(j).maxCoeff();
    for (int w = 0; w < W; ++w) {
      std::vector<double> counts(static_cast<std::size_t>(B), 0.0);
      double n = 0;
      for (Eigen::Index r = 0; r < alpha.rows(); ++r) {
        if (writer[static_cast<std::size_t>(r)] != w) continue;
        int b = hi > lo ? static_cast<int>((alpha(r, j) - lo) / (hi - lo) * B) : 0;
        if (b >= B) b = B - 1;
        counts[static_cast<std::size_t>(b)] += 1;
        n += 1;
      }
      for (double c : counts)
        if (c > 0) total -= c / n * std::log2(c / n);
    }
  }
  return total / static_cast<double>(W * alpha.cols());
}

std::vector<int> writer_blocks(int writers, int per_writer) {
  std::vector<int> w;
  for (int i = 0; i < writers; ++i)
    for (int k = 0; k < per_writer; ++k) w.push_back(i);
  return w;
}

}  // namespace

TEST_CASE("sparse PCA without lasso recovers principal loadings") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Eigen::MatrixXd X = random_matrix(20, 8, seed);
    const auto sp = sparse_pca(X, 8, 1e-6, 0.0);
    const Eigen::MatrixXd ref = svd_loadings(X, 8);
    for (int j = 0; j < 8; ++j) {
      const double cosine = std::abs(sp.loadings.col(j).dot(ref.col(j)));
      CHECK(cosine >= 0.999);
      CHECK(sp.loadings.col(j).norm() == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("lasso concentrates loadings on the informative columns") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0, 1);
  Eigen::MatrixXd X(60, 10);
  for (int r = 0; r < 60; ++r) {
    const double signal = 5 * n(rng);
    X(r, 0) = signal + 0.1 * n(rng);
    X(r, 1) = X(r, 0);  // duplicated informative column
    for (int c = 2; c < 10; ++c) X(r, c) = 0.5 * n(rng);
  }
  const auto sp = sparse_pca(X, 1, 1e-4, 0.5);
  const auto v = sp.loadings.col(0);
  CHECK(sp.sparsity() >= 0.5);
  CHECK(v.head(2).squaredNorm() > 0.99);
  // A substantial ridge splits the weight between the duplicated pair (grouping effect).
  const auto grouped = sparse_pca(X, 1, 1e3, 0.5).loadings.col(0);
  CHECK(std::abs(grouped(0)) == doctest::Approx(std::abs(grouped(1))).epsilon(1e-3));
  CHECK(grouped.head(2).squaredNorm() > 0.99);
  CHECK(sp.zero_columns() == std::vector<bool>{false});
  // Stronger lasso never reduces sparsity; lasso 1 zeroes the component.
  CHECK(sparse_pca(X, 1, 1e-4, 0.8).sparsity() >= sp.sparsity());
  CHECK(sparse_pca(X, 1, 1e-4, 1.0).zero_columns() == std::vector<bool>{true});
}

TEST_CASE("rank-one data: single loading is the generating direction") {
  Eigen::VectorXd u = random_matrix(30, 1, 8).col(0);
  Eigen::VectorXd v(5);
  v << 1, -2, 0.5, 0, 3;
  const Eigen::MatrixXd X = u * v.transpose();
  const auto sp = sparse_pca(X, 1, 1e-6, 0.0);
  CHECK(std::abs(sp.loadings.col(0).dot(v.normalized())) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(centred_rank(X) == 1);
  try {
    sparse_pca(X, 2, 1e-6, 0.0);
    FAIL("expected RankDeficient");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RankDeficient);
  }
}

TEST_CASE("sparse PCA reports non-convergence when capped") {
  const Eigen::MatrixXd X = random_matrix(40, 12, 4);
  try {
    sparse_pca(X, 4, 1e-4, 0.3, 1, 1e-12);
    FAIL("expected NoConvergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoConvergence);
  }
}

TEST_CASE("projection") {
  const Eigen::MatrixXd X = random_matrix(6, 4, 1);
  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(4, 2);
  V(1, 0) = 1;
  V(3, 1) = 1;
  const auto a = project(X, V);
  CHECK(a.col(0) == X.col(1));
  CHECK(a.col(1) == X.col(3));
  Eigen::MatrixXd Z = X;
  Z.row(2).setZero();
  CHECK(project(Z, V).row(2).isZero(0));
  CHECK_THROWS_AS(project(X, Eigen::MatrixXd::Identity(3, 3)), Error);
}

TEST_CASE("reconstruction error stays at the truncation error") {
  const Eigen::MatrixXd X = random_matrix(30, 8, 12);
  const Eigen::MatrixXd xc = X.rowwise() - X.colwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(xc);
  const Eigen::VectorXd s = svd.singularValues();
  const int L = 3;
  const double trunc = std::sqrt(s.tail(s.size() - L).squaredNorm() / s.squaredNorm());
  const auto sp = sparse_pca(X, L, 1e-6, 0.0);
  const Eigen::MatrixXd rec = project(xc, sp.loadings) * sp.loadings.transpose();
  const double err = (rec - xc).norm() / xc.norm();
  CHECK(err <= trunc * (1 + 1e-6));
}

TEST_CASE("coefficient histograms") {
  SUBCASE("point mass has zero entropy") {
    Eigen::MatrixXd a = Eigen::MatrixXd::Constant(4, 1, 2.5);
    const auto h = coefficient_histograms(a, {0, 0, 0, 0}, 16);
    CHECK(h.row(0, 0)(0) == 1.0);
    CHECK(h.row(0, 0).sum() == 1.0);
    CHECK(h.degenerate[0]);
    CHECK(entropy_bits(h.row(0, 0)) == 0.0);
  }
  SUBCASE("uniform spread over 16 bins is 4 bits") {
    Eigen::MatrixXd a(16, 1);
    for (int i = 0; i < 16; ++i) a(i, 0) = i;
    const auto h = coefficient_histograms(a, std::vector<int>(16, 0), 16);
    CHECK(h.row(0, 0).minCoeff() == doctest::Approx(1.0 / 16));
    CHECK(entropy_bits(h.row(0, 0)) == doctest::Approx(4.0));
  }
  SUBCASE("rows are distributions; entropy bounded by log2 B") {
    const Eigen::MatrixXd a = random_matrix(90, 5, 6);
    const auto writers = writer_blocks(9, 10);
    const auto h = coefficient_histograms(a, writers, 16);
    CHECK(h.writers == 9);
    for (int w = 0; w < 9; ++w)
      for (int j = 0; j < 5; ++j) {
        CHECK(h.row(w, j).sum() == doctest::Approx(1.0).epsilon(1e-12));
        const double e = entropy_bits(h.row(w, j));
        CHECK(e >= 0.0);
        CHECK(e <= 4.0 + 1e-12);
      }
    CHECK(mean_entropy(h) == doctest::Approx(oracle_mean_entropy(a, writers, 9, 16)).epsilon(1e-12));
  }
  SUBCASE("other writers' histograms ignore changes inside one writer's rows") {
    Eigen::MatrixXd a = random_matrix(40, 3, 7);
    const auto writers = writer_blocks(4, 10);
    // Pin the global range with writer 0 so edits to writer 3 keep the edges.
    a.row(0).setConstant(-100);
    a.row(1).setConstant(100);
    const auto before = coefficient_histograms(a, writers, 16);
    a.middleRows(30, 10) = random_matrix(10, 3, 99);
    const auto after = coefficient_histograms(a, writers, 16);
    CHECK(before.prob.topRows(9) == after.prob.topRows(9));
  }
  CHECK_THROWS_AS(coefficient_histograms(Eigen::MatrixXd::Zero(2, 1), {0, 2}, 16), Error);
  CHECK_THROWS_AS(coefficient_histograms(Eigen::MatrixXd::Zero(2, 1), {0, 0}, 1), Error);
}

TEST_CASE("saliency weights") {
  const auto w = saliency_weights({1, 1, 2});
  CHECK(w[0] == doctest::Approx(0.25));
  CHECK(w[2] == doctest::Approx(0.5));
  bool all_zero = false;
  const auto u = saliency_weights({0, 0, 0, 0}, &all_zero);
  CHECK(all_zero);
  for (double x : u) CHECK(x == 0.25);
  const auto scaled = saliency_weights({3, 3, 6});
  for (int i = 0; i < 3; ++i) CHECK(scaled[i] == doctest::Approx(w[i]).epsilon(1e-15));
  const auto eq = saliency_weights(std::vector<double>(7, 4.0));
  for (double x : eq) CHECK(x == doctest::Approx(1.0 / 7));
}

TEST_CASE("uniform histograms everywhere give equal weights") {
  // Every writer's coefficients are the same evenly spread sequence: entropy log2(B) per
  // histogram, identical for every filter.
  std::vector<Eigen::MatrixXd> filters;
  for (int f = 0; f < 3; ++f) {
    Eigen::MatrixXd a(48, 1);
    for (int r = 0; r < 48; ++r) a(r, 0) = r % 16;
    filters.push_back(a);
  }
  std::vector<double> phi;
  for (const auto& a : filters) phi.push_back(mean_entropy(coefficient_histograms(a, writer_blocks(3, 16), 16)));
  for (double p : phi) CHECK(p == doctest::Approx(4.0));
  for (double x : saliency_weights(phi)) CHECK(x == doctest::Approx(1.0 / 3));
}

TEST_CASE("layer calibration invariants and determinism") {
  const auto writers = writer_blocks(5, 12);
  std::vector<Eigen::MatrixXd> hogs;
  for (int f = 0; f < 6; ++f) hogs.push_back(random_matrix(60, 20, 100 + f).cwiseAbs());
  hogs.push_back(Eigen::MatrixXd::Constant(60, 20, 0.2));  // dead filter
  SaliencyParams params;
  params.components = 4;
  const auto p1 = calibrate_layer(1, hogs, writers, params, 1);
  const auto p4 = calibrate_layer(1, hogs, writers, params, 4);
  CHECK(p1.phi == p4.phi);
  CHECK(p1.weights == p4.weights);
  double total = 0;
  for (int f = 0; f < p1.filters(); ++f) {
    total += p1.weights[static_cast<std::size_t>(f)];
    CHECK(p1.phi[static_cast<std::size_t>(f)] >= 0);
    CHECK(p1.phi[static_cast<std::size_t>(f)] <= 4.0);
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(p1.phi[6] == 0.0);
  CHECK(p1.components_used[6] == 0);
  CHECK(p1.components_used[0] == 4);
  CHECK(!p1.uniform_fallback);
  CHECK(p1.writers == 5);

  const auto dead = calibrate_layer(2, {hogs[6], hogs[6]}, writers, params);
  CHECK(dead.uniform_fallback);
  CHECK(dead.weights == std::vector<double>{0.5, 0.5});
}

TEST_CASE("lasso-free calibration equals dense-PCA calibration") {
  const auto writers = writer_blocks(6, 15);
  std::vector<Eigen::MatrixXd> hogs;
  for (int f = 0; f < 5; ++f) {
    Eigen::MatrixXd h = random_matrix(90, 16, 300 + f).cwiseAbs();
    h.col(f) *= 1 + f;  // give filters different spectra
    hogs.push_back(h);
  }
  SaliencyParams params;
  params.components = 4;
  params.lasso = 0;
  params.ridge = 1e-6;
  const auto prof = calibrate_layer(1, hogs, writers, params);

  std::vector<double> phi;
  for (const auto& h : hogs) phi.push_back(oracle_mean_entropy(h * svd_loadings(h, 4), writers, 6, 16));
  const auto dense = saliency_weights(phi);
  for (std::size_t f = 0; f < dense.size(); ++f) CHECK(std::abs(prof.weights[f] - dense[f]) <= 1e-3);
}

TEST_CASE("profile persistence") {
  const fs::path dir = fs::temp_directory_path() / "wid_test_saliency";
  fs::create_directories(dir);
  SaliencyProfile p;
  p.layer = 2;
  p.phi = {0.1, 0.7, 1.0 / 3};
  p.weights = saliency_weights(p.phi);
  p.components_used = {8, 8, 8};
  p.sparsity = {0.5, 0.25, 0.125};
  p.writers = 10;
  p.rows = 123;
  p.config_digest = "abc";
  save_profile(p, dir / "p.json");
  const auto back = load_profile(dir / "p.json");
  CHECK(back.weights == p.weights);
  CHECK(back.phi == p.phi);
  CHECK(back.digest() == p.digest());

  std::ifstream in(dir / "p.json");
  std::string text{std::istreambuf_iterator<char>(in), {}};
  const auto at = text.find("\"rows\": 123");
  REQUIRE(at != std::string::npos);
  text.replace(at, 11, "\"rows\": 124");
  std::ofstream(dir / "edited.json") << text;
  try {
    load_profile(dir / "edited.json");
    FAIL("expected DigestMismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DigestMismatch);
  }
  std::ofstream(dir / "junk.json") << "{\"format\": \"other\"}";
  CHECK_THROWS_AS(load_profile(dir / "junk.json"), Error);
}
