#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "doctest.h"
#include "psgcd/errors.hpp"
#include "psgcd/eval.hpp"
#include "psgcd/kernels.hpp"
#include "psgcd/rng.hpp"

using namespace psgcd;
namespace k = psgcd::kernels;

namespace {

long long brute_force_max(const Matrix& counts) {
  const int n = counts.rows();
  std::vector<int> perm(std::size_t(n), 0);
  std::iota(perm.begin(), perm.end(), 0);
  long long best = -1;
  do {
    long long total = 0;
    for (int r = 0; r < n; ++r) total += (long long)std::llround(counts(r, perm[std::size_t(r)]));
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

}  // namespace

TEST_CASE("hungarian: diagonal and anti-diagonal cases") {
  Matrix diag(4, 4);
  for (int i = 0; i < 4; ++i) diag(i, i) = 5 + i;
  AssignmentResult r = hungarian_match(diag);
  CHECK(r.cluster_to_class == std::vector<int>{0, 1, 2, 3});
  CHECK(r.matched == 5 + 6 + 7 + 8);

  Matrix anti(3, 3);
  anti(0, 2) = 4;
  anti(1, 1) = 7;
  anti(2, 0) = 2;
  AssignmentResult r2 = hungarian_match(anti);
  CHECK(r2.cluster_to_class == std::vector<int>{2, 1, 0});
  CHECK(r2.matched == 13);
}

TEST_CASE("hungarian: ties break toward the lowest class index") {
  Matrix flat(3, 3, 2.0);  // every assignment matches 6
  AssignmentResult r = hungarian_match(flat);
  CHECK(r.cluster_to_class == std::vector<int>{0, 1, 2});
}

TEST_CASE("hungarian rejects non-square input") {
  CHECK_THROWS_AS(hungarian_match(Matrix(2, 3)), DimensionError);
}

TEST_CASE("hungarian equals brute force on 100 random 6x6 count matrices") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    Matrix counts(6, 6);
    for (std::size_t i = 0; i < counts.size(); ++i) counts.data()[i] = rng.uniform_int(50);
    AssignmentResult r = hungarian_match(counts);
    CHECK(r.matched == brute_force_max(counts));
    // the returned map is a bijection
    std::vector<char> seen(6, 0);
    for (int c : r.cluster_to_class) {
      CHECK(c >= 0);
      CHECK(c < 6);
      CHECK(!seen[std::size_t(c)]);
      seen[std::size_t(c)] = 1;
    }
  }
}

TEST_CASE("gcd_accuracy: perfect and permutation-relabeled predictions score 100") {
  Rng rng(3);
  std::vector<int> truth;
  for (int i = 0; i < 60; ++i) truth.push_back(rng.uniform_int(5));
  for (int c = 0; c < 5; ++c) truth.push_back(c);  // every class present

  MetricsReport perfect = gcd_accuracy(truth, truth, {0, 1, 2}, 5);
  CHECK(perfect.acc_all == doctest::Approx(100.0));
  CHECK(perfect.acc_old == doctest::Approx(100.0));
  CHECK(perfect.acc_new == doctest::Approx(100.0));

  const std::vector<int> relabel = {3, 0, 4, 1, 2};
  std::vector<int> permuted;
  for (int t : truth) permuted.push_back(relabel[std::size_t(t)]);
  MetricsReport still = gcd_accuracy(permuted, truth, {0, 1, 2}, 5);
  CHECK(still.acc_all == doctest::Approx(100.0));
  CHECK(still.acc_old == doctest::Approx(100.0));
  CHECK(still.acc_new == doctest::Approx(100.0));
}

TEST_CASE("gcd_accuracy: planted three-class instance checked by hand") {
  // classes 0,1 old; class 2 new; 10 samples, 2 errors planted in the new class
  std::vector<int> truth = {0, 0, 0, 1, 1, 1, 2, 2, 2, 2};
  std::vector<int> preds = {0, 0, 0, 1, 1, 1, 2, 2, 0, 1};
  MetricsReport rep = gcd_accuracy(preds, truth, {0, 1}, 3);
  CHECK(rep.acc_all == doctest::Approx(80.0));
  CHECK(rep.acc_old == doctest::Approx(100.0));
  CHECK(rep.acc_new == doctest::Approx(50.0));
  // decomposition consistency, exact in counts
  CHECK(rep.hit_all == rep.hit_old + rep.hit_new);
  CHECK(rep.n_all == rep.n_old + rep.n_new);
  CHECK(rep.per_class_acc[2] == doctest::Approx(50.0));
}

TEST_CASE("gcd_accuracy enforces the fixed-K contract") {
  std::vector<int> truth = {0, 1, 2};
  std::vector<int> preds = {0, 1, 3};  // cluster id 3 with K = 3
  CHECK_THROWS_AS(gcd_accuracy(preds, truth, {0}, 3), ProtocolError);
}

TEST_CASE("gcd_accuracy decomposition holds on random instances") {
  for (std::uint64_t seed = 5; seed <= 15; ++seed) {
    Rng rng(seed);
    std::vector<int> truth, preds;
    for (int c = 0; c < 4; ++c) {
      truth.push_back(c);
      preds.push_back(rng.uniform_int(4));
    }
    for (int i = 0; i < 80; ++i) {
      truth.push_back(rng.uniform_int(4));
      preds.push_back(rng.uniform_int(4));
    }
    MetricsReport rep = gcd_accuracy(preds, truth, {0, 1}, 4);
    CHECK(rep.hit_all == rep.hit_old + rep.hit_new);
    CHECK(rep.n_all == rep.n_old + rep.n_new);
    CHECK(rep.acc_all * rep.n_all ==
          doctest::Approx(rep.acc_old * rep.n_old + rep.acc_new * rep.n_new).epsilon(1e-9));
  }
}

TEST_CASE("kmeans: separated blobs are perfectly recovered") {
  Rng rng(7);
  Matrix x(60, 3);
  std::vector<int> truth;
  for (int i = 0; i < 60; ++i) {
    const int cls = i < 30 ? 0 : 1;
    truth.push_back(cls);
    for (int j = 0; j < 3; ++j) x(i, j) = (cls == 0 ? -10.0 : 10.0) + rng.normal();
  }
  std::vector<int> assign = kmeans_baseline(x, 2, 11, 3);
  MetricsReport rep = gcd_accuracy(assign, truth, {0}, 2);
  CHECK(rep.acc_all == doctest::Approx(100.0));
}

TEST_CASE("kmeans: duplicates get identical assignments, inertia never increases") {
  Rng rng(8);
  Matrix x(40, 4);
  for (int i = 0; i < 40; i += 2) {
    for (int j = 0; j < 4; ++j) {
      x(i, j) = rng.uniform(-5, 5);
      x(i + 1, j) = x(i, j);  // duplicate row
    }
  }
  std::vector<double> trace;
  std::vector<int> assign = kmeans_baseline(x, 4, 13, 4, &trace);
  for (int i = 0; i < 40; i += 2) CHECK(assign[std::size_t(i)] == assign[std::size_t(i) + 1]);
  for (std::size_t t = 1; t < trace.size(); ++t) CHECK(trace[t] <= trace[t - 1] + 1e-9);

  std::vector<int> again = kmeans_baseline(x, 4, 13, 4);
  CHECK(assign == again);
  CHECK_THROWS_AS(kmeans_baseline(x, 41, 1, 1), ConfigError);
}

TEST_CASE("pca components are orthonormal within 1e-10") {
  Rng rng(9);
  Matrix x(50, 8);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-2, 2);
  Matrix comps = pca_components(x, 2);
  Matrix gram = k::matmul(k::transpose(comps), comps);
  CHECK(std::fabs(gram(0, 0) - 1.0) <= 1e-10);
  CHECK(std::fabs(gram(1, 1) - 1.0) <= 1e-10);
  CHECK(std::fabs(gram(0, 1)) <= 1e-10);
}

TEST_CASE("cluster export: row count and byte-identical re-export") {
  Rng rng(10);
  Matrix x(25, 6);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1, 1);
  std::vector<int> preds, truth;
  for (int i = 0; i < 25; ++i) {
    preds.push_back(rng.uniform_int(3));
    truth.push_back(rng.uniform_int(3));
  }
  const std::string p1 = "/tmp/psgcd_viz_a.csv", p2 = "/tmp/psgcd_viz_b.csv";
  export_cluster_distribution(x, preds, truth, p1);
  export_cluster_distribution(x, preds, truth, p2);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  const std::string a = slurp(p1), b = slurp(p2);
  CHECK(a == b);
  CHECK(std::count(a.begin(), a.end(), '\n') == 26);  // header + 25 rows
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}
