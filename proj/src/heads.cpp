#include "psgcd/heads.hpp"

#include <cmath>
#include <string>

#include "psgcd/errors.hpp"
#include "psgcd/kernels.hpp"
#include "psgcd/rng.hpp"

namespace psgcd {

namespace k = kernels;

PointPrototypes PointPrototypes::init(int num_classes, int dim, std::uint64_t seed) {
  if (num_classes < 1 || dim < 1) throw ConfigError("point prototypes: need K >= 1, d >= 1");
  Rng rng(derive_seed(seed, "point_prototypes"));
  Matrix c(num_classes, dim);
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] = rng.normal();
  return PointPrototypes{k::row_l2_normalize(c)};
}

Matrix PrototypeBases::block(int b) const {
  Matrix out(u.rows(), rank);
  for (int i = 0; i < u.rows(); ++i)
    for (int j = 0; j < rank; ++j) out(i, j) = u(i, b * rank + j);
  return out;
}

Matrix inter_block_mask(int num_classes, int rank) {
  const int n = num_classes * rank;
  Matrix mask(n, n, 1.0);
  for (int b = 0; b < num_classes; ++b)
    for (int i = 0; i < rank; ++i)
      for (int j = 0; j < rank; ++j) mask(b * rank + i, b * rank + j) = 0.0;
  return mask;
}

Matrix orthonormal_columns(const Matrix& a) {
  Matrix q = a;
  const int d = q.rows(), r = q.cols();
  for (int pass = 0; pass < 2; ++pass) {
    for (int j = 0; j < r; ++j) {
      for (int prev = 0; prev < j; ++prev) {
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += q(i, prev) * q(i, j);
        for (int i = 0; i < d; ++i) q(i, j) -= dot * q(i, prev);
      }
      double norm = 0.0;
      for (int i = 0; i < d; ++i) norm += q(i, j) * q(i, j);
      norm = std::sqrt(norm);
      if (norm < 1e-10)
        throw DegenerateInputError("orthonormal_columns: column " + std::to_string(j) +
                                   " is numerically dependent");
      for (int i = 0; i < d; ++i) q(i, j) /= norm;
    }
  }
  return q;
}

PrototypeBases init_bases(int num_classes, int rank, int dim, std::uint64_t seed) {
  if (num_classes < 1 || rank < 1) throw ConfigError("init_bases: need K >= 1, r >= 1");
  if (num_classes * rank > dim)
    throw ConfigError("init_bases: K*r = " + std::to_string(num_classes * rank) +
                      " exceeds embedding dim d = " + std::to_string(dim) +
                      "; the subspace head requires K*r <= d");
  Rng rng(derive_seed(seed, "prototype_bases"));
  PrototypeBases head;
  head.num_classes = num_classes;
  head.rank = rank;
  head.u = Matrix(dim, num_classes * rank);
  for (int b = 0; b < num_classes; ++b) {
    Matrix draw(dim, rank);
    for (std::size_t i = 0; i < draw.size(); ++i) draw.data()[i] = rng.normal();
    Matrix q = orthonormal_columns(draw);
    for (int i = 0; i < dim; ++i)
      for (int j = 0; j < rank; ++j) head.u(i, b * rank + j) = q(i, j);
  }
  head.mask = inter_block_mask(num_classes, rank);
  return head;
}

Matrix point_logits(const PointPrototypes& head, const Matrix& z, double tau_c) {
  if (!(tau_c > 0.0)) throw ConfigError("point_logits: tau_c must be > 0");
  if (z.cols() != head.dim())
    throw DimensionError("point_logits: embeddings " + z.shape_str() + " vs prototypes " +
                         head.c.shape_str());
  Matrix zn = k::row_l2_normalize(z);
  Matrix cn = k::row_l2_normalize(head.c);
  return k::scale(k::matmul(zn, k::transpose(cn)), 1.0 / tau_c);
}

Matrix projection_scores(const PrototypeBases& head, const Matrix& z) {
  if (z.cols() != head.dim())
    throw DimensionError("projection_scores: embeddings " + z.shape_str() + " vs bases " +
                         head.u.shape_str());
  Matrix v = k::matmul(z, head.u);
  return k::col_block_sum(k::hadamard(v, v), head.rank);
}

Matrix subspace_soft_label(const Matrix& scores, double tau) {
  return k::softmax_rows(scores, tau);
}

double orthogonality_loss(const PrototypeBases& head) {
  Matrix gram = k::matmul(k::transpose(head.u), head.u);
  return k::frobenius_sq(k::hadamard(gram, head.mask));
}

double reconstruction_loss(const PrototypeBases& head, const Matrix& z) {
  if (z.rows() == 0) throw ConfigError("reconstruction_loss: empty batch");
  Matrix v = k::matmul(z, head.u);
  Matrix back = k::matmul(v, k::transpose(head.u));
  return k::frobenius_sq(k::sub(z, back)) / z.rows();
}

Var point_logits(Tape& tape, Var c, Var z, double tau_c) {
  if (!(tau_c > 0.0)) throw ConfigError("point_logits: tau_c must be > 0");
  Var zn = tape.row_l2_normalize(z);
  Var cn = tape.row_l2_normalize(c);
  return tape.scale(tape.matmul(zn, tape.transpose(cn)), 1.0 / tau_c);
}

Var projection_scores(Tape& tape, Var u, Var z, int rank) {
  Var v = tape.matmul(z, u);
  return tape.col_block_sum(tape.hadamard(v, v), rank);
}

Var orthogonality_loss(Tape& tape, Var u, const Matrix& mask) {
  Var gram = tape.matmul(tape.transpose(u), u);
  return tape.frobenius_sq(tape.hadamard_const(gram, mask));
}

Var reconstruction_loss(Tape& tape, Var u, Var z) {
  const int n = tape.value(z).rows();
  if (n == 0) throw ConfigError("reconstruction_loss: empty batch");
  Var v = tape.matmul(z, u);
  Var back = tape.matmul(v, tape.transpose(u));
  return tape.scale(tape.frobenius_sq(tape.sub(z, back)), 1.0 / n);
}

}  // namespace psgcd
