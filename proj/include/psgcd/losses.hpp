#pragma once

#include <cstdint>
#include <vector>

#include "psgcd/heads.hpp"
#include "psgcd/matrix.hpp"
#include "psgcd/tape.hpp"

namespace psgcd {

struct LossWeights {
  double lambda = 0.4;    // supervised/unsupervised balance
  double epsilon = 60.0;  // mean-entropy regularization strength
  double tau_u = 0.07;    // unsupervised contrastive temperature
  double tau_s = 0.07;    // supervised contrastive temperature
  double tau_c = 0.1;     // classifier temperature
  double tau_t = 0.05;    // pseudo-label temperature, must satisfy tau_t < tau_c
  double w_orth = 1.0;
  double w_rec = 1.0;
  bool entropy_normalized = false;  // divide H(p̄) by log K

  // Denominator pool for the unsupervised contrastive loss: second-view
  // anchors against first-view candidates (as in the classifier formulation
  // used here), or the 2N multiview pool.
  enum class Pool { kCrossView, kMultiview };
  Pool pool = Pool::kCrossView;

  void validate() const;  // throws ConfigError naming the offending field
};

// Index-aligned embeddings of the two augmented views. labels[i] is a class
// id where labeled_mask[i] is set and -1 elsewhere.
struct BatchViews {
  Matrix embeddings_a;
  Matrix embeddings_b;
  std::vector<int> labels;
  std::vector<std::uint8_t> labeled_mask;

  int size() const { return embeddings_a.rows(); }
  std::vector<int> labeled_indices() const;
  void validate() const;
};

// Anchor bookkeeping for the supervised contrastive term.
struct SupConDiag {
  int labeled_anchors = 0;
  int skipped_anchors = 0;       // labeled anchors with no positive partner
  double unnormalized = 0.0;     // sum over anchors before the 1/|B_l| factor
};

// ---------------------------------------------------------------------------
// Individual loss terms, recorded on the tape. Embedding vars must hold
// row-normalized embeddings.
// ---------------------------------------------------------------------------

Var unsup_contrastive(Tape& tape, Var za, Var zb, double tau_u,
                      LossWeights::Pool pool = LossWeights::Pool::kCrossView);

Var sup_contrastive(Tape& tape, Var za, Var zb, const std::vector<int>& labels,
                    const std::vector<std::uint8_t>& labeled_mask, double tau_s,
                    SupConDiag* diag = nullptr);

// (1 - lambda) * unsupervised + lambda * supervised.
Var rep_loss(Tape& tape, Var unsup, Var sup, double lambda);

struct ClsUnsupTerms {
  Var loss;     // symmetric cross-entropy minus epsilon * H(p̄)
  Var entropy;  // H(p̄)
};

// pa/pb: tau_c probabilities per view; pta/ptb: sharpened tau_t probabilities
// already behind stop_gradient. Each view's prediction is supervised by the
// other view's pseudo-labels; the two directions are averaged.
ClsUnsupTerms cls_unsup(Tape& tape, Var pa, Var pb, Var pta, Var ptb, double epsilon,
                        bool entropy_normalized);

// Mean cross-entropy of one view's probabilities against one-hot labels over
// the labeled rows.
Var cls_sup(Tape& tape, Var probs, const std::vector<int>& labeled_idx,
            const std::vector<int>& labels, int num_classes);

// ---------------------------------------------------------------------------
// Full objective.
// ---------------------------------------------------------------------------

// Classifier head state on the tape: exactly one of point/subspace is active.
struct HeadVars {
  bool subspace = false;
  Var point_c;             // K x d prototypes
  Var bases_u;             // d x (K*r)
  int rank = 0;
  const Matrix* mask = nullptr;  // inter-block mask, subspace only
  int num_classes = 0;
};

struct AblationFlags {
  bool orth_on = true;
  bool rec_on = true;
};

struct LossTerms {
  Var rep_u, rep_s, rep;
  Var cls_u, cls_s, cls;
  Var orth, rec;      // invalid vars when ablated or point head
  Var entropy;
  Var total;
};

// Per-term values for logging; mirrors the training log columns.
struct LossBreakdown {
  double rep_u = 0, rep_s = 0, rep = 0;
  double cls_u = 0, cls_s = 0, cls = 0;
  double orth = 0, rec = 0;
  double entropy = 0;
  double total = 0;
  double sup_unnormalized = 0;
  int sup_anchors_skipped = 0;
};

LossTerms total_loss(Tape& tape, Var za, Var zb, const std::vector<int>& labels,
                     const std::vector<std::uint8_t>& labeled_mask, const HeadVars& head,
                     const LossWeights& weights, const AblationFlags& flags,
                     LossBreakdown* breakdown = nullptr);

}  // namespace psgcd
