#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "psgcd/kernels.hpp"
#include "psgcd/matrix.hpp"

namespace psgcd {

// Handle into a Tape node.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode gradient tape. Records primitive operations with their cached
// forward values; backward() replays the record once and accumulates exact
// analytic gradients into every reachable node. A tape is single-owner: one
// recording, one backward, then clear() or destruction.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Matrix value);          // constant leaf
  Var param(const Matrix& value);   // leaf registered for gradient readout

  const Matrix& value(Var v) const;
  double scalar(Var v) const;       // value of a 1x1 node
  const Matrix& grad(Var v);        // zeros if the node was not reached
  const std::vector<Var>& params() const { return params_; }

  void backward(Var loss);
  void clear();                     // frees all cached values; tape dead afterwards
  std::size_t num_nodes() const { return nodes_.size(); }

  // Primitives. Each registers a backward rule against its operands.
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double c);
  Var hadamard(Var a, Var b);
  Var hadamard_const(Var a, Matrix mask);
  Var add_const(Var a, Matrix c);
  Var relu(Var a);
  Var row_l2_normalize(Var a);
  Var softmax_rows(Var a, double temperature);
  Var log_clamped(Var a, double eps = 1e-12);
  Var sum_all(Var a);
  Var frobenius_sq(Var a);
  Var mean_rows(Var a);
  Var diag_vec(Var a);
  Var col_block_sum(Var a, int block);
  Var concat_rows(Var a, Var b);
  Var slice_rows(Var a, std::vector<int> idx);
  Var add_row_broadcast(Var a, Var bias);
  Var reshape(Var a, int rows, int cols);
  Var stop_gradient(Var a);
  Var im2col(Var a, kernels::ConvGeom g);
  // Batch statistics mode; optionally reports the batch moments so the caller
  // can maintain running statistics.
  Var batchnorm_train(Var x, int channels, Var gamma, Var beta, double eps,
                      std::vector<double>* batch_mean = nullptr,
                      std::vector<double>* batch_var = nullptr);
  // Running-statistics mode; mean/var enter as constants.
  Var batchnorm_eval(Var x, int channels, Var gamma, Var beta, Matrix run_mean, Matrix run_var,
                     double eps);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool grad_touched = false;
    std::function<void(Tape&)> backward;  // empty for leaves
  };

  Var push(Matrix value, std::function<void(Tape&)> bwd);
  void accumulate(Var v, const Matrix& g);
  void check_alive() const;

  std::vector<Node> nodes_;
  std::vector<Var> params_;
  bool cleared_ = false;

  friend struct TapeBackwardAccess;
};

}  // namespace psgcd
