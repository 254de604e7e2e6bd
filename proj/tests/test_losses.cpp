#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "psgcd/errors.hpp"
#include "psgcd/grad_check.hpp"
#include "psgcd/heads.hpp"
#include "psgcd/kernels.hpp"
#include "psgcd/losses.hpp"
#include "psgcd/rng.hpp"

using namespace psgcd;
namespace k = psgcd::kernels;

namespace {

Matrix random_unit_rows(Rng& rng, int rows, int cols) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return k::row_l2_normalize(m);
}

double dot_rows(const Matrix& a, int i, const Matrix& b, int j) {
  double s = 0.0;
  for (int c = 0; c < a.cols(); ++c) s += a(i, c) * b(j, c);
  return s;
}

// Literal double-loop over anchors and candidates.
double oracle_unsup_contrastive(const Matrix& za, const Matrix& zb, double tau) {
  const int n = za.rows();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const double num = std::exp(dot_rows(za, i, zb, i) / tau);
    double den = 0.0;
    for (int j = 0; j < n; ++j) den += std::exp(dot_rows(za, j, zb, i) / tau);
    total += -std::log(num / den);
  }
  return total / n;
}

// Literal triple-loop over anchors, positives and denominator candidates.
double oracle_sup_contrastive(const Matrix& za, const Matrix& zb, const std::vector<int>& labels,
                              const std::vector<std::uint8_t>& mask, double tau) {
  const int n = za.rows();
  double total = 0.0;
  int anchors = 0;
  for (int i = 0; i < n; ++i) {
    if (!mask[std::size_t(i)]) continue;
    ++anchors;
    std::vector<int> positives;
    for (int j = 0; j < n; ++j)
      if (j != i && mask[std::size_t(j)] && labels[std::size_t(j)] == labels[std::size_t(i)])
        positives.push_back(j);
    if (positives.empty()) continue;
    double den = 0.0;
    for (int m = 0; m < n; ++m) den += std::exp(dot_rows(za, i, zb, m) / tau);
    double inner = 0.0;
    for (int j : positives) inner += -std::log(std::exp(dot_rows(za, i, zb, j) / tau) / den);
    total += inner / double(positives.size());
  }
  return anchors == 0 ? 0.0 : total / anchors;
}

// Literal per-element cross-entropy and entropy computation.
double oracle_cls_unsup(const Matrix& pa, const Matrix& pb, const Matrix& pta, const Matrix& ptb,
                        double epsilon) {
  const int n = pa.rows(), kk = pa.cols();
  double ce_ab = 0.0, ce_ba = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < kk; ++j) {
      ce_ab += -ptb(i, j) * std::log(std::max(pa(i, j), 1e-12));
      ce_ba += -pta(i, j) * std::log(std::max(pb(i, j), 1e-12));
    }
  double entropy = 0.0;
  for (int j = 0; j < kk; ++j) {
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += pa(i, j) + pb(i, j);
    mean /= 2.0 * n;
    entropy += -mean * std::log(std::max(mean, 1e-12));
  }
  return 0.5 * (ce_ab / n + ce_ba / n) - epsilon * entropy;
}

double oracle_cls_sup(const Matrix& p, const std::vector<int>& labeled_idx,
                      const std::vector<int>& labels) {
  if (labeled_idx.empty()) return 0.0;
  double total = 0.0;
  for (int i : labeled_idx) total += -std::log(std::max(p(i, labels[std::size_t(i)]), 1e-12));
  return total / double(labeled_idx.size());
}

struct RandomBatch {
  Matrix za, zb;
  std::vector<int> labels;
  std::vector<std::uint8_t> mask;
};

RandomBatch make_batch(Rng& rng, int n, int d, int num_classes, double labeled_frac) {
  RandomBatch b;
  b.za = random_unit_rows(rng, n, d);
  b.zb = random_unit_rows(rng, n, d);
  b.labels.assign(std::size_t(n), -1);
  b.mask.assign(std::size_t(n), 0);
  for (int i = 0; i < n; ++i)
    if (rng.uniform01() < labeled_frac) {
      b.mask[std::size_t(i)] = 1;
      b.labels[std::size_t(i)] = rng.uniform_int(num_classes);
    }
  return b;
}

double eval_unsup(const Matrix& za, const Matrix& zb, double tau,
                  LossWeights::Pool pool = LossWeights::Pool::kCrossView) {
  Tape tape;
  return tape.scalar(unsup_contrastive(tape, tape.input(za), tape.input(zb), tau, pool));
}

double eval_sup(const RandomBatch& b, double tau, SupConDiag* diag = nullptr) {
  Tape tape;
  return tape.scalar(
      sup_contrastive(tape, tape.input(b.za), tape.input(b.zb), b.labels, b.mask, tau, diag));
}

}  // namespace

TEST_CASE("unsup contrastive closed forms") {
  // two orthogonal samples, identical across views
  Matrix z = Matrix::from_rows({{1, 0}, {0, 1}});
  const double loss = eval_unsup(z, z, 1.0);
  const double expect = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  CHECK(loss == doctest::Approx(0.3133).epsilon(1e-3));

  // all embeddings identical: uniform denominator
  Matrix same(6, 3);
  for (int i = 0; i < 6; ++i) {
    same(i, 0) = 0.6;
    same(i, 1) = 0.8;
    same(i, 2) = 0.0;
  }
  CHECK(eval_unsup(same, same, 0.5) == doctest::Approx(std::log(6.0)).epsilon(1e-12));
}

TEST_CASE("unsup contrastive rejects a degenerate batch") {
  Matrix z = Matrix::from_rows({{1, 0}});
  CHECK_THROWS_AS(eval_unsup(z, z, 1.0), DegenerateInputError);
}

TEST_CASE("unsup contrastive matches the double-loop oracle within 1e-10") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    RandomBatch b = make_batch(rng, 8, 16, 3, 0.5);
    CHECK(eval_unsup(b.za, b.zb, 0.31) ==
          doctest::Approx(oracle_unsup_contrastive(b.za, b.zb, 0.31)).epsilon(1e-10));
  }
}

TEST_CASE("multiview pool variant is finite and differs from the cross-view pool") {
  Rng rng(77);
  RandomBatch b = make_batch(rng, 6, 8, 3, 0.5);
  const double cross = eval_unsup(b.za, b.zb, 0.2, LossWeights::Pool::kCrossView);
  const double multi = eval_unsup(b.za, b.zb, 0.2, LossWeights::Pool::kMultiview);
  CHECK(std::isfinite(multi));
  CHECK(multi != doctest::Approx(cross).epsilon(1e-9));

  // literal oracle for the multiview pool
  const int n = b.za.rows();
  Matrix all = k::concat_rows(b.za, b.zb);
  double total = 0.0;
  for (int i = 0; i < 2 * n; ++i) {
    const int partner = i < n ? i + n : i - n;
    double den = 0.0;
    for (int j = 0; j < 2 * n; ++j)
      if (j != i) den += std::exp(dot_rows(all, i, all, j) / 0.2);
    total += -std::log(std::exp(dot_rows(all, i, all, partner) / 0.2) / den);
  }
  CHECK(multi == doctest::Approx(total / (2 * n)).epsilon(1e-9));
}

TEST_CASE("sup contrastive closed form: two samples, same label") {
  Matrix z(2, 4);
  for (int i = 0; i < 2; ++i) z(i, 0) = 1.0;  // identical unit embeddings
  RandomBatch b;
  b.za = z;
  b.zb = z;
  b.labels = {4, 4};
  b.mask = {1, 1};
  SupConDiag diag;
  const double loss = eval_sup(b, 1.0, &diag);
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(diag.labeled_anchors == 2);
  CHECK(diag.skipped_anchors == 0);
  CHECK(diag.unnormalized == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("sup contrastive skips anchors without positives") {
  Rng rng(5);
  RandomBatch b = make_batch(rng, 4, 8, 10, 0.0);
  b.mask = {1, 1, 0, 0};
  b.labels = {0, 1, -1, -1};  // each label appears once
  SupConDiag diag;
  const double loss = eval_sup(b, 0.5, &diag);
  CHECK(loss == 0.0);
  CHECK(diag.skipped_anchors == 2);
}

TEST_CASE("sup contrastive returns zero on unlabeled-only batches") {
  Rng rng(6);
  RandomBatch b = make_batch(rng, 4, 8, 3, 0.0);
  SupConDiag diag;
  CHECK(eval_sup(b, 0.5, &diag) == 0.0);
  CHECK(diag.labeled_anchors == 0);
}

TEST_CASE("sup contrastive matches the triple-loop oracle within 1e-10") {
  for (std::uint64_t seed = 21; seed <= 40; ++seed) {
    Rng rng(seed);
    RandomBatch b = make_batch(rng, 8, 12, 3, 0.8);
    CHECK(eval_sup(b, 0.42) ==
          doctest::Approx(oracle_sup_contrastive(b.za, b.zb, b.labels, b.mask, 0.42))
              .epsilon(1e-10));
  }
}

TEST_CASE("rep_loss boundaries and recombination") {
  Rng rng(51);
  RandomBatch b = make_batch(rng, 8, 12, 3, 0.6);
  auto eval_rep = [&](double lambda) {
    Tape tape;
    Var za = tape.input(b.za), zb = tape.input(b.zb);
    Var u = unsup_contrastive(tape, za, zb, 0.07);
    Var s = sup_contrastive(tape, za, zb, b.labels, b.mask, 0.07);
    return std::tuple{tape.scalar(rep_loss(tape, u, s, lambda)), tape.scalar(u), tape.scalar(s)};
  };
  auto [rep0, u0, s0] = eval_rep(0.0);
  CHECK(rep0 == doctest::Approx(u0).epsilon(1e-15));
  auto [rep1, u1, s1] = eval_rep(1.0);
  CHECK(rep1 == doctest::Approx(s1).epsilon(1e-15));
  auto [rep04, u04, s04] = eval_rep(0.4);
  CHECK(rep04 == doctest::Approx(0.6 * u04 + 0.4 * s04).epsilon(1e-12));
  // affine in lambda
  CHECK(rep04 == doctest::Approx(rep0 + 0.4 * (rep1 - rep0)).epsilon(1e-12));
}

TEST_CASE("cls_unsup: perfect one-hot agreement and uniform entropy bound") {
  const int n = 6, kk = 3;
  Matrix onehot(n, kk);
  for (int i = 0; i < n; ++i) onehot(i, i % kk) = 1.0;  // balanced across classes
  Tape tape;
  Var pa = tape.input(onehot), pb = tape.input(onehot);
  Var pta = tape.input(onehot), ptb = tape.input(onehot);
  auto terms = cls_unsup(tape, pa, pb, pta, ptb, 0.0, false);
  CHECK(tape.scalar(terms.loss) == doctest::Approx(0.0).epsilon(1e-12));

  Matrix uniform(n, kk, 1.0 / kk);
  Tape t2;
  auto terms2 = cls_unsup(t2, t2.input(uniform), t2.input(uniform), t2.input(uniform),
                          t2.input(uniform), 2.0, false);
  CHECK(t2.scalar(terms2.entropy) == doctest::Approx(std::log(double(kk))).epsilon(1e-12));
}

TEST_CASE("entropy of the mean prediction stays inside [0, log K]") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix scores(5, 4);
    for (std::size_t i = 0; i < scores.size(); ++i) scores.data()[i] = rng.uniform(-3, 3);
    Matrix p = k::softmax_rows(scores, 0.7);
    Tape tape;
    auto terms = cls_unsup(tape, tape.input(p), tape.input(p), tape.input(p), tape.input(p), 1.0,
                           false);
    const double h = tape.scalar(terms.entropy);
    CHECK(h >= 0.0);
    CHECK(h <= std::log(4.0) + 1e-12);
  }
}

TEST_CASE("cls_unsup rejects non-stochastic rows") {
  Matrix bad(2, 3, 0.5);  // rows sum to 1.5
  Matrix good(2, 3, 1.0 / 3.0);
  Tape tape;
  CHECK_THROWS_AS(
      cls_unsup(tape, tape.input(bad), tape.input(good), tape.input(good), tape.input(good), 1.0,
                false),
      DegenerateInputError);
}

TEST_CASE("cls_unsup matches the elementwise oracle within 1e-10") {
  for (std::uint64_t seed = 41; seed <= 60; ++seed) {
    Rng rng(seed);
    auto probs = [&rng](int n, int kk, double tau) {
      Matrix s(n, kk);
      for (std::size_t i = 0; i < s.size(); ++i) s.data()[i] = rng.uniform(-2, 2);
      return k::softmax_rows(s, tau);
    };
    Matrix pa = probs(7, 4, 0.5), pb = probs(7, 4, 0.5);
    Matrix pta = probs(7, 4, 0.25), ptb = probs(7, 4, 0.25);
    Tape tape;
    auto terms = cls_unsup(tape, tape.input(pa), tape.input(pb), tape.input(pta), tape.input(ptb),
                           3.7, false);
    CHECK(tape.scalar(terms.loss) ==
          doctest::Approx(oracle_cls_unsup(pa, pb, pta, ptb, 3.7)).epsilon(1e-10));
  }
}

TEST_CASE("cls_sup: perfect predictions, uniform predictions, oracle") {
  const int kk = 4;
  Matrix perfect(3, kk);
  perfect(0, 2) = 1.0;
  perfect(1, 0) = 1.0;
  perfect(2, 3) = 1.0;
  std::vector<int> labels = {2, 0, 3};
  std::vector<int> idx = {0, 1, 2};
  Tape tape;
  CHECK(tape.scalar(cls_sup(tape, tape.input(perfect), idx, labels, kk)) ==
        doctest::Approx(0.0).epsilon(1e-12));

  Matrix uniform(3, kk, 1.0 / kk);
  Tape t2;
  CHECK(t2.scalar(cls_sup(t2, t2.input(uniform), idx, labels, kk)) ==
        doctest::Approx(std::log(double(kk))).epsilon(1e-12));

  for (std::uint64_t seed = 61; seed <= 80; ++seed) {
    Rng rng(seed);
    Matrix s(6, kk);
    for (std::size_t i = 0; i < s.size(); ++i) s.data()[i] = rng.uniform(-2, 2);
    Matrix p = k::softmax_rows(s, 0.4);
    std::vector<int> lab(6, -1);
    std::vector<int> li;
    for (int i = 0; i < 6; ++i)
      if (rng.bernoulli(0.7)) {
        lab[std::size_t(i)] = rng.uniform_int(kk);
        li.push_back(i);
      }
    Tape t3;
    CHECK(t3.scalar(cls_sup(t3, t3.input(p), li, lab, kk)) ==
          doctest::Approx(oracle_cls_sup(p, li, lab)).epsilon(1e-10));
  }
}

namespace {

struct ToyProblem {
  Matrix xa, xb;  // raw inputs (rows normalized by the "encoder" below)
  std::vector<int> labels;
  std::vector<std::uint8_t> mask;
  Matrix enc_w;  // single dense layer standing in for the encoder
  PrototypeBases bases;
  PointPrototypes point;
  LossWeights weights;

  std::vector<int> labeled_idx() const {
    std::vector<int> idx;
    for (int i = 0; i < int(mask.size()); ++i)
      if (mask[std::size_t(i)]) idx.push_back(i);
    return idx;
  }

  static ToyProblem make(std::uint64_t seed) {
    Rng rng(seed);
    ToyProblem t;
    const int n = 6, din = 8, d = 8, K = 3, r = 2;
    t.xa = Matrix(n, din);
    t.xb = Matrix(n, din);
    for (std::size_t i = 0; i < t.xa.size(); ++i) t.xa.data()[i] = rng.normal();
    for (std::size_t i = 0; i < t.xb.size(); ++i) t.xb.data()[i] = rng.normal();
    t.labels = {0, 1, -1, 2, -1, 1};
    t.mask = {1, 1, 0, 1, 0, 1};
    t.enc_w = Matrix(din, d);
    for (std::size_t i = 0; i < t.enc_w.size(); ++i) t.enc_w.data()[i] = 0.4 * rng.normal();
    for (int i = 0; i < din; ++i) t.enc_w(i, i % d) += 1.0;
    t.bases = init_bases(K, r, d, seed + 1);
    t.point = PointPrototypes::init(K, d, seed + 2);
    t.weights.lambda = 0.4;
    t.weights.epsilon = 2.0;
    t.weights.tau_u = 0.1;
    t.weights.tau_s = 0.1;
    t.weights.tau_c = 0.1;
    t.weights.tau_t = 0.05;
    return t;
  }
};

// Builds the full objective on a fresh tape; parameters follow the order
// {enc_w, head}.
double toy_objective(const ToyProblem& t, bool subspace, const std::vector<Matrix>& params,
                     std::vector<Matrix>* grads, const AblationFlags& flags = {},
                     LossBreakdown* breakdown = nullptr) {
  Tape tape;
  Var w = tape.param(params[0]);
  Var head_param = tape.param(params[1]);
  Var za = tape.row_l2_normalize(tape.matmul(tape.input(t.xa), w));
  Var zb = tape.row_l2_normalize(tape.matmul(tape.input(t.xb), w));
  HeadVars head;
  head.num_classes = 3;
  if (subspace) {
    head.subspace = true;
    head.bases_u = head_param;
    head.rank = t.bases.rank;
    head.mask = &t.bases.mask;
  } else {
    head.point_c = head_param;
  }
  LossTerms terms = total_loss(tape, za, zb, t.labels, t.mask, head, t.weights, flags, breakdown);
  const double value = tape.scalar(terms.total);
  if (grads) {
    tape.backward(terms.total);
    *grads = {tape.grad(w), tape.grad(head_param)};
  }
  return value;
}

}  // namespace

TEST_CASE("total_loss bookkeeping: logged terms recombine to the total") {
  ToyProblem t = ToyProblem::make(7);
  LossBreakdown b;
  toy_objective(t, true, {t.enc_w, t.bases.u}, nullptr, {}, &b);
  const double recombined = b.rep + b.cls + b.orth + b.rec;
  CHECK(b.total == doctest::Approx(recombined).epsilon(1e-12));
  CHECK(b.rep == doctest::Approx(0.6 * b.rep_u + 0.4 * b.rep_s).epsilon(1e-12));
  CHECK(b.cls == doctest::Approx(0.6 * b.cls_u + 0.4 * b.cls_s).epsilon(1e-12));
  CHECK(b.rep_u >= 0.0);
  CHECK(b.rep_s >= 0.0);
  CHECK(b.cls_s >= 0.0);
  CHECK(b.orth >= 0.0);
  CHECK(b.rec >= 0.0);
  CHECK(std::isfinite(b.total));
}

TEST_CASE("ablation flags drop exactly the constrained terms") {
  ToyProblem t = ToyProblem::make(11);
  LossBreakdown full, none;
  toy_objective(t, true, {t.enc_w, t.bases.u}, nullptr, {}, &full);
  toy_objective(t, true, {t.enc_w, t.bases.u}, nullptr, {false, false}, &none);
  CHECK(none.total == doctest::Approx(none.rep + none.cls).epsilon(1e-15));
  CHECK(none.rep == doctest::Approx(full.rep).epsilon(1e-15));
  CHECK(none.cls == doctest::Approx(full.cls).epsilon(1e-15));
  CHECK(none.orth == 0.0);
  CHECK(none.rec == 0.0);

  LossBreakdown no_orth;
  toy_objective(t, true, {t.enc_w, t.bases.u}, nullptr, {false, true}, &no_orth);
  CHECK(no_orth.total == doctest::Approx(no_orth.rep + no_orth.cls + no_orth.rec).epsilon(1e-12));
}

TEST_CASE("full objective gradients match finite differences for both heads") {
  ToyProblem t = ToyProblem::make(13);
  for (bool subspace : {true, false}) {
    std::vector<Matrix> params = {t.enc_w, subspace ? t.bases.u : t.point.c};
    // Pseudo-labels are data: freeze them at the base point for the numeric
    // probes so the finite differences measure the same objective that the
    // stop-gradient tape differentiates.
    std::vector<Matrix> frozen_pt;
    {
      Matrix za = k::row_l2_normalize(k::matmul(t.xa, params[0]));
      Matrix zb = k::row_l2_normalize(k::matmul(t.xb, params[0]));
      Matrix sa, sb;
      if (subspace) {
        PrototypeBases h = t.bases;
        h.u = params[1];
        sa = projection_scores(h, za);
        sb = projection_scores(h, zb);
      } else {
        PointPrototypes h;
        h.c = params[1];
        sa = point_logits(h, za, 1.0);
        sb = point_logits(h, zb, 1.0);
      }
      frozen_pt = {k::softmax_rows(sa, t.weights.tau_t), k::softmax_rows(sb, t.weights.tau_t)};
    }
    GradCheckFn fn = [&](const std::vector<Matrix>& p, std::vector<Matrix>* grads) {
      if (grads) return toy_objective(t, subspace, p, grads);
      // numeric probe with frozen pseudo-labels
      Tape tape;
      Var w = tape.input(p[0]);
      Var head_param = tape.input(p[1]);
      Var za = tape.row_l2_normalize(tape.matmul(tape.input(t.xa), w));
      Var zb = tape.row_l2_normalize(tape.matmul(tape.input(t.xb), w));
      HeadVars head;
      head.num_classes = 3;
      if (subspace) {
        head.subspace = true;
        head.bases_u = head_param;
        head.rank = t.bases.rank;
        head.mask = &t.bases.mask;
      } else {
        head.point_c = head_param;
      }
      Var scores_a = subspace ? projection_scores(tape, head.bases_u, za, head.rank)
                              : point_logits(tape, head.point_c, za, 1.0);
      Var scores_b = subspace ? projection_scores(tape, head.bases_u, zb, head.rank)
                              : point_logits(tape, head.point_c, zb, 1.0);
      Var pa = tape.softmax_rows(scores_a, t.weights.tau_c);
      Var pb = tape.softmax_rows(scores_b, t.weights.tau_c);
      Var pta = tape.input(frozen_pt[0]);
      Var ptb = tape.input(frozen_pt[1]);
      Var loss = tape.add(
          rep_loss(tape, unsup_contrastive(tape, za, zb, t.weights.tau_u),
                   sup_contrastive(tape, za, zb, t.labels, t.mask, t.weights.tau_s),
                   t.weights.lambda),
          tape.add(tape.scale(cls_unsup(tape, pa, pb, pta, ptb, t.weights.epsilon, false).loss,
                              1.0 - t.weights.lambda),
                   tape.scale(tape.scale(tape.add(cls_sup(tape, pa, t.labeled_idx(), t.labels, 3),
                                                  cls_sup(tape, pb, t.labeled_idx(), t.labels, 3)),
                                         0.5),
                              t.weights.lambda)));
      if (subspace) {
        loss = tape.add(loss, orthogonality_loss(tape, head.bases_u, *head.mask));
        loss = tape.add(loss,
                        reconstruction_loss(tape, head.bases_u, tape.concat_rows(za, zb)));
      }
      return tape.scalar(loss);
    };
    auto report = grad_check(fn, params, {"encoder", subspace ? "bases" : "prototypes"}, 1e-5,
                             1e-5);
    INFO((subspace ? "subspace head: " : "point head: ") << report.summary());
    CHECK(report.pass);
  }
}

TEST_CASE("stop-gradient: the pseudo-label path alone carries zero gradient") {
  ToyProblem t = ToyProblem::make(17);
  Tape tape;
  Var w = tape.param(t.enc_w);
  Var u = tape.param(t.bases.u);
  Var za = tape.row_l2_normalize(tape.matmul(tape.input(t.xa), w));
  Var scores = projection_scores(tape, u, za, t.bases.rank);
  Var pt = tape.stop_gradient(tape.softmax_rows(scores, t.weights.tau_t));
  // constant predictions: the only parameter path runs through the pseudo-labels
  Matrix const_pred(6, 3, 1.0 / 3.0);
  Var ce = tape.scale(
      tape.sum_all(tape.hadamard(pt, tape.log_clamped(tape.input(const_pred)))), -1.0 / 6.0);
  tape.backward(ce);
  CHECK(max_abs_diff(tape.grad(w), Matrix(t.enc_w.rows(), t.enc_w.cols())) == 0.0);
  CHECK(max_abs_diff(tape.grad(u), Matrix(t.bases.u.rows(), t.bases.u.cols())) == 0.0);
}

TEST_CASE("batch losses are permutation equivariant within 1e-12") {
  ToyProblem t = ToyProblem::make(19);
  LossBreakdown before;
  toy_objective(t, true, {t.enc_w, t.bases.u}, nullptr, {}, &before);

  std::vector<int> perm = {4, 0, 5, 2, 1, 3};
  ToyProblem shuffled = t;
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < t.xa.cols(); ++j) {
      shuffled.xa(i, j) = t.xa(perm[std::size_t(i)], j);
      shuffled.xb(i, j) = t.xb(perm[std::size_t(i)], j);
    }
    shuffled.labels[std::size_t(i)] = t.labels[std::size_t(perm[std::size_t(i)])];
    shuffled.mask[std::size_t(i)] = t.mask[std::size_t(perm[std::size_t(i)])];
  }
  LossBreakdown after;
  toy_objective(shuffled, true, {t.enc_w, t.bases.u}, nullptr, {}, &after);
  CHECK(std::fabs(before.rep_u - after.rep_u) <= 1e-12);
  CHECK(std::fabs(before.rep_s - after.rep_s) <= 1e-12);
  CHECK(std::fabs(before.cls_u - after.cls_u) <= 1e-12);
  CHECK(std::fabs(before.cls_s - after.cls_s) <= 1e-12);
  CHECK(std::fabs(before.rec - after.rec) <= 1e-12);
  CHECK(std::fabs(before.total - after.total) <= 1e-12);
}

TEST_CASE("loss weights validation") {
  LossWeights w;
  w.lambda = 1.5;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = LossWeights{};
  w.tau_t = 0.2;  // >= tau_c
  CHECK_THROWS_AS(w.validate(), ConfigError);
  w = LossWeights{};
  w.epsilon = -1.0;
  CHECK_THROWS_AS(w.validate(), ConfigError);
  CHECK_NOTHROW(LossWeights{}.validate());
}
