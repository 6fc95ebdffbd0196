#include "wid/classify.hpp"
#include "wid/imaging.hpp"

#include <doctest.h>

#include "oracles.hpp"

#include <filesystem>
#include <fstream>
#include <random>

using namespace wid;
using namespace wid::oracle;

TEST_CASE("SMO decision values match an interior-point QP oracle") {
  const Eigen::MatrixXd probes = probe_points();
  double worst = 0;
  for (std::uint64_t seed = 0; seed < 8; ++seed)
    for (double C : {0.5, 10.0}) {
      const Toy t = toy_set(30, seed, seed % 2 ? 3.0 : 1.0);
      const double gamma = 0.5;
      const auto model = train_binary(t.X, t.y, C, gamma);
      CHECK(model.converged);
      const auto [alpha, offset] = interior_point_svm(rbf_kernel(t.X, t.X, gamma), t.y, C);
      Eigen::VectorXd coef(30);
      for (int i = 0; i < 30; ++i) coef(i) = t.y[i] * alpha(i);
      const Eigen::VectorXd ref = (rbf_kernel(probes, t.X, gamma) * coef).array() + offset;
      const Eigen::VectorXd got = model.decisions(probes);
      const Eigen::VectorXd ref_train = (rbf_kernel(t.X, t.X, gamma) * coef).array() + offset;
      worst = std::max({worst, (got - ref).cwiseAbs().maxCoeff(),
                        (model.decisions(t.X) - ref_train).cwiseAbs().maxCoeff()});
      // Duals respect the box.
      CHECK(model.coef.cwiseAbs().maxCoeff() <= C + 1e-12);
    }
  MESSAGE("largest decision-value deviation " << worst);
  CHECK(worst <= 1e-3);
}

TEST_CASE("separable toy is fitted perfectly") {
  const Toy t = toy_set(30, 42, 8.0);
  const auto m = train_binary(t.X, t.y, 10, 0.5);
  const Eigen::VectorXd d = m.decisions(t.X);
  for (int i = 0; i < 30; ++i) CHECK(d(i) * t.y[i] > 0);
  // The blobs are split by the first coordinate's sign, shifted by the class offset.
  CHECK(m.decision(Eigen::Vector2d(4, -2)) > 0);
  CHECK(m.decision(Eigen::Vector2d(-4, 2)) < 0);
}

TEST_CASE("conflicting duplicates bound the duals at C") {
  Eigen::MatrixXd X(4, 2);
  X << 0, 0, 0, 0, 1, 1, -1, -1;
  const auto m = train_binary(X, {1, -1, 1, -1}, 2.0, 1.0);
  CHECK(m.converged);
  CHECK(m.coef.cwiseAbs().maxCoeff() <= 2.0 + 1e-12);
  int at_bound = 0;
  for (Eigen::Index i = 0; i < m.coef.size(); ++i) at_bound += std::abs(std::abs(m.coef(i)) - 2.0) < 1e-9;
  CHECK(at_bound >= 2);
}

TEST_CASE("RBF kernel basics") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Eigen::MatrixXd X(6, 5);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = g(rng);
  const auto K = rbf_kernel(X, X, 0.7);
  for (int i = 0; i < 6; ++i) CHECK(K(i, i) == doctest::Approx(1).epsilon(1e-14));
  CHECK((K - K.transpose()).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK(K(0, 1) == doctest::Approx(std::exp(-0.7 * (X.row(0) - X.row(1)).squaredNorm())).epsilon(1e-12));
  CHECK_THROWS_AS(train_binary(X, {1, 1, -1, -1, 1, -1}, 1, 0), Error);
  CHECK_THROWS_AS(train_binary(X, {1, 1, 1, 1, 1, 1}, 1, 1), Error);
}

TEST_CASE("one-vs-all training") {
  // Three writers as 2-D clusters.
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 0.4);
  const double centres[3][2] = {{0, 0}, {3, 0}, {0, 3}};
  Eigen::MatrixXd X(60, 2);
  std::vector<int> w(60);
  for (int i = 0; i < 60; ++i) {
    w[i] = i % 3;
    X(i, 0) = centres[w[i]][0] + g(rng);
    X(i, 1) = centres[w[i]][1] + g(rng);
  }
  OvaOptions o;
  o.C = 10;
  o.gamma = 0.5;
  const auto models = train_ova(X, w, 3, o);
  REQUIRE(models.size() == 3);
  const Eigen::MatrixXd s = fragment_scores(models, X);
  CHECK(s.minCoeff() >= 0);
  CHECK(s.maxCoeff() <= 1);
  int correct = 0;
  for (int i = 0; i < 60; ++i) correct += predict(s.row(i).transpose()) == w[i];
  CHECK(correct == 60);

  o.jobs = 3;
  const auto parallel = train_ova(X, w, 3, o);
  for (int k = 0; k < 3; ++k) {
    CHECK(parallel[k].rho == models[k].rho);
    CHECK(parallel[k].coef == models[k].coef);
  }

  CHECK_THROWS_AS(train_ova(X, w, 1, o), Error);
  std::vector<int> missing = w;
  for (int& v : missing)
    if (v == 2) v = 0;
  try {
    train_ova(X, missing, 3, o);
    FAIL("expected SingleClass");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::SingleClass);
  }
}

TEST_CASE("negative subsampling caps the ratio") {
  std::vector<int> w;
  for (int i = 0; i < 500; ++i) w.push_back(i < 5 ? 0 : 1 + i % 7);
  const auto rows = ova_rows(w, 0, 20, 9);
  int pos = 0, neg = 0;
  for (int r : rows) (w[r] == 0 ? pos : neg)++;
  CHECK(pos == 5);
  CHECK(neg == 100);
  CHECK(std::is_sorted(rows.begin(), rows.end()));
  CHECK(ova_rows(w, 0, 20, 9) == rows);
  CHECK(ova_rows(w, 0, 0, 9).size() == 500);
  CHECK(ova_rows(w, 3, 20, 9).size() == w.size());  // ratio not reached: keep all
}

TEST_CASE("score aggregation") {
  CHECK(sigmoid(0) == 0.5);
  Eigen::MatrixXd frags(2, 2);
  frags << 0.2, 0.9, 0.4, 0.1;
  const ScoreVector ws = word_score(frags);
  CHECK(ws(0) == doctest::Approx(0.3));
  CHECK(ws(1) == doctest::Approx(0.5));
  CHECK(word_score(frags.topRows(1)) == frags.row(0).transpose());
  CHECK_THROWS_AS(word_score(Eigen::MatrixXd(0, 2)), Error);

  // Permutation invariance of word and page means.
  Eigen::MatrixXd swapped(2, 2);
  swapped << frags.row(1), frags.row(0);
  CHECK((word_score(swapped) - ws).norm() <= 1e-15);
  const ScoreVector a = (ScoreVector(2) << 0.2, 0.6).finished(), b = (ScoreVector(2) << 0.4, 0.2).finished();
  CHECK(page_score({a}) == a);
  CHECK(page_score({a, b})(0) == doctest::Approx(0.3));
  CHECK((page_score({a, b}) - page_score({b, a})).norm() <= 1e-15);
  CHECK_THROWS_AS(page_score({}), Error);
}

TEST_CASE("prediction and ranking") {
  const ScoreVector s = (ScoreVector(3) << 0.1, 0.9, 0.3).finished();
  CHECK(predict(s) == 1);
  CHECK(predict((ScoreVector(2) << 0.5, 0.5).finished()) == 0);
  CHECK(predict((s.array() + 7).matrix()) == 1);
  CHECK(predict(s.unaryExpr([](double v) { return std::log(v); })) == 1);
  CHECK(rank_of(s, 1) == 1);
  CHECK(rank_of(s, 2) == 2);
  CHECK(rank_of(s, 0) == 3);
  CHECK(top_k(s, 2) == std::vector<int>{1, 2});
  CHECK(top_k((ScoreVector(3) << 0.5, 0.2, 0.5).finished(), 3) == std::vector<int>{0, 2, 1});
  CHECK(rank_of((ScoreVector(2) << 0.5, 0.5).finished(), 1) == 2);
}

TEST_CASE("fusion") {
  const ScoreVector p1 = (ScoreVector(2) << 0.2, 0.8).finished(), p2 = (ScoreVector(2) << 0.6, 0.0).finished();
  CHECK(fuse(p1, p2, 1) == p1);
  CHECK(fuse(p1, p2, 0) == p2);
  const ScoreVector h = fuse(p1, p2, 0.5);
  CHECK(h(0) == doctest::Approx(0.4));
  CHECK(h(1) == doctest::Approx(0.4));
  CHECK_THROWS_AS(fuse(p1, ScoreVector::Zero(3), 0.5), Error);
  CHECK_THROWS_AS(fuse(p1, p2, 1.5), Error);
  const auto g = alpha_grid();
  CHECK(g.size() == 21);
  CHECK(g.front() == 0);
  CHECK(g.back() == 1);
  CHECK(g[10] == doctest::Approx(0.5));
}

TEST_CASE("fusion weight selection") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  const int W = 5;
  std::vector<ScoreVector> p1, p2;
  std::vector<int> truth;
  for (int i = 0; i < 200; ++i) {
    const int w = i % W;
    ScoreVector a(W), b(W);
    for (int k = 0; k < W; ++k) a(k) = 0.3 * u(rng), b(k) = u(rng);
    a(w) += 0.5;  // first layer informative, second pure noise
    p1.push_back(a);
    p2.push_back(b);
    truth.push_back(w);
  }
  const auto noisy = select_alpha(p1, p2, truth);
  CHECK(noisy.accuracies.size() == 21);
  CHECK(noisy.accuracy == 1.0);
  // The choice sits on the informative side of the sweep.
  CHECK(noisy.alpha >= 0.5);
  CHECK(noisy.accuracies.back() == 1.0);
  CHECK(noisy.accuracies.front() < 0.5);

  // Independent oracle: maximum accuracy, then closest to 0.5.
  double best_acc = -1, best_alpha = -1;
  for (std::size_t g = 0; g < noisy.accuracies.size(); ++g) {
    const double a = g * 0.05;
    if (noisy.accuracies[g] > best_acc + 1e-15 ||
        (std::abs(noisy.accuracies[g] - best_acc) <= 1e-15 && std::abs(a - 0.5) < std::abs(best_alpha - 0.5) - 1e-12))
      best_acc = noisy.accuracies[g], best_alpha = a;
  }
  CHECK(noisy.alpha == doctest::Approx(best_alpha));

  // Symmetric classifiers: every weight ties, 0.5 wins.
  const auto sym = select_alpha(p1, p1, truth);
  CHECK(sym.alpha == doctest::Approx(0.5));

  // Noise in the first layer instead: the choice moves to the other end.
  std::vector<ScoreVector> q1(p2), q2(p1);
  const auto flipped = select_alpha(q1, q2, truth);
  CHECK(flipped.accuracies.front() == 1.0);
  CHECK(flipped.alpha <= 0.5);
  CHECK_THROWS_AS(select_alpha({}, {}, {}), Error);
}

TEST_CASE("grid search tie rules and oracle") {
  const auto one = grid_search({3}, {0.25}, [](double, double) { return 0.1; });
  CHECK(one.C == 3);
  CHECK(one.gamma == 0.25);
  CHECK_THROWS_AS(grid_search({}, {1}, [](double, double) { return 0.0; }), Error);

  // All ties: smallest C, then smallest gamma, regardless of input order.
  const auto tie = grid_search({10, 1, 0.1}, {4, 0.5}, [](double, double) { return 0.5; });
  CHECK(tie.C == 0.1);
  CHECK(tie.gamma == 0.5);
  CHECK(tie.cells.size() == 6);

  // Oracle: exhaustive sweep on a real toy word problem.
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 0.8);
  auto make = [&](int words) {
    WordSet s;
    s.X.resize(words * 3, 2);
    for (int wd = 0; wd < words; ++wd) {
      s.word_writer.push_back(wd % 3);
      for (int f = 0; f < 3; ++f) {
        const int r = wd * 3 + f;
        s.word_of_row.push_back(wd);
        s.X(r, 0) = (wd % 3) * 1.2 + g(rng);
        s.X(r, 1) = (wd % 3 == 1 ? 1.0 : 0.0) + g(rng);
      }
    }
    return s;
  };
  const WordSet train = make(24), val = make(18);
  const std::vector<double> Cs = {0.1, 1, 10}, gs = {0.125, 1, 8};
  OvaOptions base;
  const auto got = grid_search_words(train, val, 3, Cs, gs, base);
  double best = -1, bC = 0, bg = 0;
  for (double C : Cs)
    for (double gm : gs) {
      OvaOptions o = base;
      o.C = C;
      o.gamma = gm;
      const double acc = top1(word_scores(train_ova(train.X, train.writer_of_rows(), 3, o), val), val.word_writer);
      if (acc > best) best = acc, bC = C, bg = gm;
    }
  CHECK(got.accuracy == best);
  CHECK(got.C == bC);
  CHECK(got.gamma == bg);
}

TEST_CASE("model bundle round trip") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g;
  Eigen::MatrixXd X(30, 6);
  for (Eigen::Index i = 0; i < X.size(); ++i) X.data()[i] = g(rng);
  std::vector<int> w(30);
  for (int i = 0; i < 30; ++i) w[i] = i % 3;
  OvaOptions o;
  ModelBundle b;
  b.writers = {"a", "b", "c"};
  b.pooling = Pooling::Pre;
  b.alpha = 0.35;
  b.config_digest = "abc";
  for (int layer : {1, 2}) {
    LayerModels l;
    l.layer = layer;
    l.saliency_digest = "s" + std::to_string(layer);
    l.models = train_ova(X, w, 3, o);
    b.layers.push_back(l);
  }
  const auto dir = std::filesystem::temp_directory_path() / "wid_test_bundle";
  std::filesystem::create_directories(dir);
  save_bundle(b, dir / "m.bin");
  const auto back = load_bundle(dir / "m.bin");
  CHECK(back.writers == b.writers);
  CHECK(back.pooling == Pooling::Pre);
  CHECK(back.alpha == 0.35);
  CHECK(back.layer(2).saliency_digest == "s2");
  for (int k = 0; k < 3; ++k)
    CHECK((back.layer(1).models[k].decisions(X) - b.layers[0].models[k].decisions(X)).cwiseAbs().maxCoeff() <= 1e-5);
  CHECK_THROWS_AS(back.layer(3), Error);

  auto bytes = read_file_bytes(dir / "m.bin");
  bytes[bytes.size() / 2] ^= 0x10;
  {
    std::ofstream(dir / "bad.bin", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                           static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_bundle(dir / "bad.bin"), Error);
  CHECK_THROWS_AS(load_bundle(dir / "none.bin"), Error);
}
