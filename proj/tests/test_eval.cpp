#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "svkit/eval.hpp"
#include "svkit/rng.hpp"

using namespace svkit;

namespace {

// O(n_g * n_i)-style brute force: recompute FAR/FRR by direct counting at
// every threshold, independent of the sorted-array implementation.
void brute_force_roc(const std::vector<double>& gen, const std::vector<double>& imp,
                     const std::vector<double>& thresholds, std::vector<double>& far,
                     std::vector<double>& frr) {
  far.clear();
  frr.clear();
  for (double t : thresholds) {
    int below = 0;
    for (double d : imp)
      if (d < t) ++below;
    int at_or_above = 0;
    for (double d : gen)
      if (d >= t) ++at_or_above;
    far.push_back(double(below) / double(imp.size()));
    frr.push_back(double(at_or_above) / double(gen.size()));
  }
}

// Mann-Whitney counting oracle for the AUC
double mann_whitney_auc(const std::vector<double>& gen, const std::vector<double>& imp) {
  double wins = 0.0;
  for (double g : gen)
    for (double i : imp) {
      if (i > g)
        wins += 1.0;
      else if (i == g)
        wins += 0.5;
    }
  return wins / (double(gen.size()) * double(imp.size()));
}

}  // namespace

TEST_CASE("trimmed mean: the spec's hand-built outlier vectors") {
  // 499 x 1.0 plus one 100.0: mu = 1.198, sigma ~ 4.42, band excludes 100
  std::vector<double> v(499, 1.0);
  v.push_back(100.0);
  CHECK(trimmed_mean(v) == doctest::Approx(1.0).epsilon(1e-12));

  // [1 x 9, 101]: mu = 11, sigma = 30, band [-49, 71] -> 101 excluded
  std::vector<double> w(9, 1.0);
  w.push_back(101.0);
  CHECK(trimmed_mean(w) == doctest::Approx(1.0).epsilon(1e-12));

  // sigma = 0 path returns the common value
  std::vector<double> c(500, 3.25);
  CHECK(trimmed_mean(c) == 3.25);

  CHECK_THROWS_AS(trimmed_mean({}), NnError);
}

TEST_CASE("compute_roc equals brute force on 100 random score sets") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const int ng = 3 + int(rng.uniform_index(50));
    const int ni = 3 + int(rng.uniform_index(50));
    std::vector<double> gen, imp;
    for (int i = 0; i < ng; ++i) gen.push_back(rng.normal(1.0, 1.0));
    for (int i = 0; i < ni; ++i) imp.push_back(rng.normal(2.0, 1.0));
    // inject ties now and then
    if (trial % 3 == 0 && ng > 1 && ni > 1) imp[0] = gen[0];

    RocCurve curve = compute_roc(gen, imp);
    std::vector<double> far, frr;
    brute_force_roc(gen, imp, curve.thresholds, far, frr);
    REQUIRE(curve.far.size() == far.size());
    for (size_t k = 0; k < far.size(); ++k) {
      CHECK(curve.far[k] == far[k]);
      CHECK(curve.frr[k] == frr[k]);
    }

    // monotonicity invariants
    for (size_t k = 1; k < curve.far.size(); ++k) {
      CHECK(curve.far[k] >= curve.far[k - 1]);
      CHECK(curve.frr[k] <= curve.frr[k - 1]);
    }
  }
  CHECK_THROWS_AS(compute_roc({}, {1.0}), NnError);
  CHECK_THROWS_AS(compute_roc({1.0}, {}), NnError);
}

TEST_CASE("EER hand cases") {
  // perfect separation
  RocCurve perfect = compute_roc({0.1, 0.2}, {0.8, 0.9});
  CHECK(compute_eer(perfect).eer == 0.0);
  CHECK(compute_auc(perfect) == doctest::Approx(1.0).epsilon(1e-12));

  // genuine [1,2,3] vs impostor [2.5,4,5] -> EER = 1/3 exactly
  RocCurve curve = compute_roc({1.0, 2.0, 3.0}, {2.5, 4.0, 5.0});
  CHECK(compute_eer(curve).eer == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // identical distributions -> 0.5
  std::vector<double> same = {0.3, 0.5, 0.7, 0.9};
  RocCurve fifty = compute_roc(same, same);
  CHECK(compute_eer(fifty).eer == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(compute_auc(fifty) == doctest::Approx(0.5).epsilon(0.3));
}

TEST_CASE("trapezoidal AUC equals the Mann-Whitney count") {
  Rng rng(77);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> gen, imp;
    for (int i = 0; i < 30; ++i) gen.push_back(rng.normal(0.0, 1.0));
    for (int i = 0; i < 30; ++i) imp.push_back(rng.normal(1.0, 1.2));
    RocCurve curve = compute_roc(gen, imp);
    CHECK(compute_auc(curve) == doctest::Approx(mann_whitney_auc(gen, imp)).epsilon(1e-9));
  }
}

TEST_CASE("EER and AUC are invariant under monotone transforms") {
  Rng rng(13);
  std::vector<double> gen, imp;
  for (int i = 0; i < 25; ++i) gen.push_back(0.5 + rng.uniform());
  for (int i = 0; i < 35; ++i) imp.push_back(1.0 + rng.uniform());

  RocCurve base = compute_roc(gen, imp);
  auto warp = [](double x) { return std::exp(1.7 * x) + 0.3 * x; };  // strictly increasing
  std::vector<double> gen2, imp2;
  for (double g : gen) gen2.push_back(warp(g));
  for (double i : imp) imp2.push_back(warp(i));
  RocCurve warped = compute_roc(gen2, imp2);

  CHECK(compute_eer(base).eer == doctest::Approx(compute_eer(warped).eer).epsilon(1e-12));
  CHECK(compute_auc(base) == doctest::Approx(compute_auc(warped)).epsilon(1e-12));
}

TEST_CASE("score_from_embeddings: deterministic and sane") {
  UtteranceEmbeddings ea, eb;
  ea.n_windows = 3;
  ea.dim = 4;
  ea.values = {0, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0};
  eb.n_windows = 2;
  eb.dim = 4;
  eb.values = {0, 1, 0, 0, 0, 2, 0, 0};

  const double d1 = score_from_embeddings(ea, eb, 500, 42);
  const double d2 = score_from_embeddings(ea, eb, 500, 42);
  CHECK(d1 == d2);
  // distances range over sqrt(i^2 + j^2) for i in {0,1,2}, j in {1,2}
  CHECK(d1 >= 1.0);
  CHECK(d1 <= std::sqrt(8.0));

  // single-window utterances: every draw compares the same rows
  UtteranceEmbeddings sa = ea, sb = eb;
  sa.n_windows = 1;
  sa.values.resize(4);
  sb.n_windows = 1;
  sb.values.resize(4);
  CHECK(score_from_embeddings(sa, sb, 500, 7) == doctest::Approx(1.0).epsilon(1e-12));

  UtteranceEmbeddings empty;
  empty.dim = 4;
  CHECK_THROWS_WITH_AS(score_from_embeddings(empty, eb, 10, 0), doctest::Contains("too short"),
                       NnError);
}

TEST_CASE("roc csv renders infinities") {
  RocCurve curve = compute_roc({0.5}, {1.5});
  const std::string path = "/tmp/svkit_roc_test.csv";
  write_roc_csv(path, curve);
  std::ifstream in(path);
  std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CHECK(all.find("threshold,far,frr") != std::string::npos);
  CHECK(all.find("-inf,") != std::string::npos);
  CHECK(all.find("\ninf,") != std::string::npos);
}
