#include "psgcd/losses.hpp"

#include <cmath>
#include <iostream>
#include <sstream>

#include "psgcd/errors.hpp"
#include "psgcd/kernels.hpp"

namespace psgcd {

namespace k = kernels;

void LossWeights::validate() const {
  std::ostringstream os;
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    os << "loss.lambda must lie in [0,1], got " << lambda;
    throw ConfigError(os.str());
  }
  if (!(epsilon >= 0.0)) {
    os << "loss.epsilon must be >= 0, got " << epsilon;
    throw ConfigError(os.str());
  }
  const double temps[] = {tau_u, tau_s, tau_c, tau_t};
  const char* names[] = {"loss.tau_u", "loss.tau_s", "loss.tau_c", "loss.tau_t"};
  for (int i = 0; i < 4; ++i)
    if (!(temps[i] > 0.0)) {
      os << names[i] << " must be > 0, got " << temps[i];
      throw ConfigError(os.str());
    }
  if (!(tau_t < tau_c)) {
    os << "loss.tau_t must be smaller than loss.tau_c (pseudo-labels are sharpened), got tau_t="
       << tau_t << " tau_c=" << tau_c;
    throw ConfigError(os.str());
  }
  if (!(w_orth >= 0.0) || !(w_rec >= 0.0))
    throw ConfigError("loss.w_orth and loss.w_rec must be >= 0");
}

std::vector<int> BatchViews::labeled_indices() const {
  std::vector<int> idx;
  for (int i = 0; i < int(labeled_mask.size()); ++i)
    if (labeled_mask[std::size_t(i)]) idx.push_back(i);
  return idx;
}

void BatchViews::validate() const {
  if (!embeddings_a.same_shape(embeddings_b))
    throw DimensionError("batch views: embedding shapes differ, " + embeddings_a.shape_str() +
                         " vs " + embeddings_b.shape_str());
  if (int(labels.size()) != size() || int(labeled_mask.size()) != size())
    throw DimensionError("batch views: labels/mask length must equal batch size");
  for (int i = 0; i < size(); ++i) {
    const bool lab = labeled_mask[std::size_t(i)] != 0;
    if (lab && labels[std::size_t(i)] < 0)
      throw ConfigError("batch views: labeled row " + std::to_string(i) + " has no label");
    if (!lab && labels[std::size_t(i)] != -1)
      throw ConfigError("batch views: unlabeled row " + std::to_string(i) + " carries a label");
  }
}

namespace {

void require_min_batch(int n) {
  if (n < 2)
    throw DegenerateInputError("contrastive loss: batch of " + std::to_string(n) +
                               " is degenerate, need >= 2");
}

void require_stochastic_rows(const Matrix& p, const char* what) {
  for (int i = 0; i < p.rows(); ++i) {
    double total = 0.0;
    for (int j = 0; j < p.cols(); ++j) {
      const double v = p(i, j);
      if (!(v >= 0.0 && v <= 1.0 + 1e-9))
        throw DegenerateInputError(std::string(what) + ": entry out of [0,1] at row " +
                                   std::to_string(i));
      total += v;
    }
    if (std::fabs(total - 1.0) > 1e-6)
      throw DegenerateInputError(std::string(what) + ": row " + std::to_string(i) +
                                 " sums to " + std::to_string(total) + ", not 1");
  }
}

}  // namespace

Var unsup_contrastive(Tape& tape, Var za, Var zb, double tau_u, LossWeights::Pool pool) {
  const int n = tape.value(za).rows();
  require_min_batch(n);
  if (pool == LossWeights::Pool::kCrossView) {
    // Anchor i is the second view z̃_i; candidates are all first-view rows.
    Var sims = tape.matmul(zb, tape.transpose(za));   // (i,j) = sim(z̃_i, ẑ_j)
    Var probs = tape.softmax_rows(sims, tau_u);
    Var diag = tape.diag_vec(probs);
    return tape.scale(tape.sum_all(tape.log_clamped(diag)), -1.0 / n);
  }
  // Multiview pool: 2n anchors, each against the 2n-1 other embeddings, the
  // positive being the partner view of the same sample.
  Var all = tape.concat_rows(za, zb);
  Var sims = tape.matmul(all, tape.transpose(all));
  Matrix diag_mask(2 * n, 2 * n);
  for (int i = 0; i < 2 * n; ++i) diag_mask(i, i) = -1e9;
  Var probs = tape.softmax_rows(tape.add_const(sims, diag_mask), tau_u);
  Matrix pick(2 * n, 2 * n);
  for (int i = 0; i < n; ++i) {
    pick(i, n + i) = 1.0 / (2 * n);
    pick(n + i, i) = 1.0 / (2 * n);
  }
  return tape.scale(tape.sum_all(tape.hadamard_const(tape.log_clamped(probs), pick)), -1.0);
}

Var sup_contrastive(Tape& tape, Var za, Var zb, const std::vector<int>& labels,
                    const std::vector<std::uint8_t>& labeled_mask, double tau_s,
                    SupConDiag* diag) {
  const int n = tape.value(za).rows();
  require_min_batch(n);
  SupConDiag local;
  std::vector<int> anchors;
  for (int i = 0; i < n; ++i)
    if (labeled_mask[std::size_t(i)]) anchors.push_back(i);
  local.labeled_anchors = int(anchors.size());
  if (anchors.empty()) {
    std::cerr << "[psgcd] warning: supervised contrastive loss got a batch with no labeled "
                 "samples; contributing zero\n";
    if (diag) *diag = local;
    return tape.input(Matrix(1, 1, 0.0));
  }

  // Positives: other labeled samples with the same label, taken from the
  // second view. The denominator runs over every second-view embedding.
  Matrix weights(n, n);
  for (int i : anchors) {
    std::vector<int> positives;
    for (int j : anchors)
      if (j != i && labels[std::size_t(j)] == labels[std::size_t(i)]) positives.push_back(j);
    if (positives.empty()) {
      ++local.skipped_anchors;
      continue;
    }
    const double w = 1.0 / double(positives.size());
    for (int j : positives) weights(i, j) = w;
  }

  Var sims = tape.matmul(za, tape.transpose(zb));  // (i,j) = sim(ẑ_i, z̃_j)
  Var probs = tape.softmax_rows(sims, tau_s);
  Var logp = tape.log_clamped(probs);
  Var per_anchor_sum = tape.sum_all(tape.hadamard_const(logp, weights));
  Var unnorm = tape.scale(per_anchor_sum, -1.0);
  Var loss = tape.scale(unnorm, 1.0 / double(anchors.size()));
  if (diag) {
    local.unnormalized = tape.scalar(unnorm);
    *diag = local;
  }
  return loss;
}

Var rep_loss(Tape& tape, Var unsup, Var sup, double lambda) {
  return tape.add(tape.scale(unsup, 1.0 - lambda), tape.scale(sup, lambda));
}

ClsUnsupTerms cls_unsup(Tape& tape, Var pa, Var pb, Var pta, Var ptb, double epsilon,
                        bool entropy_normalized) {
  const Matrix& pav = tape.value(pa);
  require_stochastic_rows(pav, "cls_unsup p_hat(a)");
  require_stochastic_rows(tape.value(pb), "cls_unsup p_hat(b)");
  require_stochastic_rows(tape.value(pta), "cls_unsup p_tilde(a)");
  require_stochastic_rows(tape.value(ptb), "cls_unsup p_tilde(b)");
  const int n = pav.rows();
  const int num_classes = pav.cols();

  // CE(target, pred) with the sharpened other-view distribution as target.
  Var ce_ab = tape.scale(tape.sum_all(tape.hadamard(ptb, tape.log_clamped(pa))), -1.0 / n);
  Var ce_ba = tape.scale(tape.sum_all(tape.hadamard(pta, tape.log_clamped(pb))), -1.0 / n);
  Var ce = tape.scale(tape.add(ce_ab, ce_ba), 0.5);

  Var pbar = tape.mean_rows(tape.concat_rows(pa, pb));
  Var entropy = tape.scale(tape.sum_all(tape.hadamard(pbar, tape.log_clamped(pbar))), -1.0);
  const double ent_scale = entropy_normalized ? epsilon / std::log(double(num_classes)) : epsilon;
  Var loss = tape.sub(ce, tape.scale(entropy, ent_scale));
  return ClsUnsupTerms{loss, entropy};
}

Var cls_sup(Tape& tape, Var probs, const std::vector<int>& labeled_idx,
            const std::vector<int>& labels, int num_classes) {
  require_stochastic_rows(tape.value(probs), "cls_sup p_hat");
  if (labeled_idx.empty()) {
    std::cerr << "[psgcd] warning: supervised classification loss got a batch with no labeled "
                 "samples; contributing zero\n";
    return tape.input(Matrix(1, 1, 0.0));
  }
  Var rows = tape.slice_rows(probs, labeled_idx);
  Matrix onehot(int(labeled_idx.size()), num_classes);
  for (int i = 0; i < int(labeled_idx.size()); ++i) {
    const int y = labels[std::size_t(labeled_idx[std::size_t(i)])];
    if (y < 0 || y >= num_classes)
      throw ConfigError("cls_sup: label " + std::to_string(y) + " outside [0," +
                        std::to_string(num_classes) + ")");
    onehot(i, y) = 1.0;
  }
  Var picked = tape.hadamard_const(tape.log_clamped(rows), onehot);
  return tape.scale(tape.sum_all(picked), -1.0 / double(labeled_idx.size()));
}

LossTerms total_loss(Tape& tape, Var za, Var zb, const std::vector<int>& labels,
                     const std::vector<std::uint8_t>& labeled_mask, const HeadVars& head,
                     const LossWeights& weights, const AblationFlags& flags,
                     LossBreakdown* breakdown) {
  weights.validate();
  LossTerms terms;
  SupConDiag sup_diag;

  terms.rep_u = unsup_contrastive(tape, za, zb, weights.tau_u, weights.pool);
  terms.rep_s = sup_contrastive(tape, za, zb, labels, labeled_mask, weights.tau_s, &sup_diag);
  terms.rep = rep_loss(tape, terms.rep_u, terms.rep_s, weights.lambda);

  // Raw class scores per view: cosines for the point head, squared projection
  // norms for the subspace head. Temperatures apply in the softmax.
  Var scores_a, scores_b;
  if (head.subspace) {
    scores_a = projection_scores(tape, head.bases_u, za, head.rank);
    scores_b = projection_scores(tape, head.bases_u, zb, head.rank);
  } else {
    scores_a = point_logits(tape, head.point_c, za, 1.0);
    scores_b = point_logits(tape, head.point_c, zb, 1.0);
  }
  Var pa = tape.softmax_rows(scores_a, weights.tau_c);
  Var pb = tape.softmax_rows(scores_b, weights.tau_c);
  Var pta = tape.stop_gradient(tape.softmax_rows(scores_a, weights.tau_t));
  Var ptb = tape.stop_gradient(tape.softmax_rows(scores_b, weights.tau_t));

  ClsUnsupTerms unsup = cls_unsup(tape, pa, pb, pta, ptb, weights.epsilon,
                                  weights.entropy_normalized);
  terms.cls_u = unsup.loss;
  terms.entropy = unsup.entropy;

  std::vector<int> labeled_idx;
  for (int i = 0; i < int(labeled_mask.size()); ++i)
    if (labeled_mask[std::size_t(i)]) labeled_idx.push_back(i);
  Var sup_a = cls_sup(tape, pa, labeled_idx, labels, head.num_classes);
  Var sup_b = cls_sup(tape, pb, labeled_idx, labels, head.num_classes);
  terms.cls_s = tape.scale(tape.add(sup_a, sup_b), 0.5);

  terms.cls = tape.add(tape.scale(terms.cls_u, 1.0 - weights.lambda),
                       tape.scale(terms.cls_s, weights.lambda));

  Var total = tape.add(terms.rep, terms.cls);
  if (head.subspace) {
    if (flags.orth_on && weights.w_orth > 0.0) {
      terms.orth = orthogonality_loss(tape, head.bases_u, *head.mask);
      total = tape.add(total, tape.scale(terms.orth, weights.w_orth));
    }
    if (flags.rec_on && weights.w_rec > 0.0) {
      Var both = tape.concat_rows(za, zb);
      terms.rec = reconstruction_loss(tape, head.bases_u, both);
      total = tape.add(total, tape.scale(terms.rec, weights.w_rec));
    }
  }
  terms.total = total;

  if (breakdown) {
    breakdown->rep_u = tape.scalar(terms.rep_u);
    breakdown->rep_s = tape.scalar(terms.rep_s);
    breakdown->rep = tape.scalar(terms.rep);
    breakdown->cls_u = tape.scalar(terms.cls_u);
    breakdown->cls_s = tape.scalar(terms.cls_s);
    breakdown->cls = tape.scalar(terms.cls);
    breakdown->entropy = tape.scalar(terms.entropy);
    breakdown->orth = terms.orth.valid() ? tape.scalar(terms.orth) : 0.0;
    breakdown->rec = terms.rec.valid() ? tape.scalar(terms.rec) : 0.0;
    breakdown->total = tape.scalar(terms.total);
    breakdown->sup_unnormalized = sup_diag.unnormalized;
    breakdown->sup_anchors_skipped = sup_diag.skipped_anchors;
  }
  return terms;
}

}  // namespace psgcd
