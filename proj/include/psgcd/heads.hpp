#pragma once

#include <cstdint>

#include "psgcd/matrix.hpp"
#include "psgcd/tape.hpp"

namespace psgcd {

// Single-vector-per-class classifier head. Rows of c are the prototypes.
struct PointPrototypes {
  Matrix c;  // K x d

  int num_classes() const { return c.rows(); }
  int dim() const { return c.cols(); }

  static PointPrototypes init(int num_classes, int dim, std::uint64_t seed);
};

// Subspace classifier head: one d x rank basis block per class, stored
// stacked as u = [U_1 ... U_K], plus the inter-block mask that restricts the
// orthogonality penalty to cross-class column products.
struct PrototypeBases {
  Matrix u;  // d x (K * rank)
  int num_classes = 0;
  int rank = 0;
  Matrix mask;  // (K*rank) x (K*rank)

  int dim() const { return u.rows(); }
  // Columns [k*rank, (k+1)*rank) of u.
  Matrix block(int k) const;
};

// Zeros on the K diagonal rank x rank blocks, ones elsewhere.
Matrix inter_block_mask(int num_classes, int rank);

// Each block starts with orthonormal columns (QR of a seeded Gaussian draw);
// blocks are not mutually orthogonal at init, the orthogonality penalty
// drives that during training. Requires num_classes * rank <= dim.
PrototypeBases init_bases(int num_classes, int rank, int dim, std::uint64_t seed);

// Modified Gram-Schmidt with one re-orthogonalization pass.
Matrix orthonormal_columns(const Matrix& a);

// ---------------------------------------------------------------------------
// Plain forward paths (evaluation, oracle tests).
// ---------------------------------------------------------------------------

// (i,k) = cos(z_i, c_k) / tau_c; both sides normalized internally.
Matrix point_logits(const PointPrototypes& head, const Matrix& z, double tau_c);

// (i,k) = squared norm of the projection coefficients U_k^T z_i.
Matrix projection_scores(const PrototypeBases& head, const Matrix& z);

// Row softmax of projection scores at temperature tau.
Matrix subspace_soft_label(const Matrix& scores, double tau);

// || (U^T U) (.) mask ||_F^2
double orthogonality_loss(const PrototypeBases& head);

// mean_i || z_i - U U^T z_i ||^2
double reconstruction_loss(const PrototypeBases& head, const Matrix& z);

// ---------------------------------------------------------------------------
// Tape-recorded counterparts used in training.
// ---------------------------------------------------------------------------
Var point_logits(Tape& tape, Var c, Var z, double tau_c);
Var projection_scores(Tape& tape, Var u, Var z, int rank);
Var orthogonality_loss(Tape& tape, Var u, const Matrix& mask);
Var reconstruction_loss(Tape& tape, Var u, Var z);

}  // namespace psgcd
