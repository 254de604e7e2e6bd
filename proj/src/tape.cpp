#include "psgcd/tape.hpp"

#include <cmath>
#include <memory>
#include <utility>

#include "psgcd/errors.hpp"

namespace psgcd {

namespace k = kernels;

// Gives backward closures access to node values/gradients through the tape.
struct TapeBackwardAccess {
  static const Matrix& value(const Tape& t, int id) { return t.nodes_[std::size_t(id)].value; }
  static const Matrix& grad(const Tape& t, int id) { return t.nodes_[std::size_t(id)].grad; }
  static void accumulate(Tape& t, int id, const Matrix& g) { t.accumulate(Var{id}, g); }
  static void set_backward(Tape& t, int id, std::function<void(Tape&)> fn) {
    t.nodes_[std::size_t(id)].backward = std::move(fn);
  }
};

namespace {
using A = TapeBackwardAccess;
}

void Tape::check_alive() const {
  if (cleared_) throw Error("tape: cleared tape cannot be used");
}

Var Tape::push(Matrix value, std::function<void(Tape&)> bwd) {
  check_alive();
  nodes_.push_back(Node{std::move(value), Matrix(), false, std::move(bwd)});
  return Var{int(nodes_.size()) - 1};
}

Var Tape::input(Matrix value) { return push(std::move(value), nullptr); }

Var Tape::param(const Matrix& value) {
  Var v = push(value, nullptr);
  params_.push_back(v);
  return v;
}

const Matrix& Tape::value(Var v) const {
  check_alive();
  return nodes_[std::size_t(v.id)].value;
}

double Tape::scalar(Var v) const {
  const Matrix& m = value(v);
  if (m.rows() != 1 || m.cols() != 1)
    throw DimensionError("scalar: node is " + m.shape_str() + ", expected 1x1");
  return m(0, 0);
}

const Matrix& Tape::grad(Var v) {
  check_alive();
  Node& n = nodes_[std::size_t(v.id)];
  if (!n.grad_touched) {
    n.grad = Matrix(n.value.rows(), n.value.cols());
    n.grad_touched = true;
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[std::size_t(v.id)];
  if (!n.grad_touched) {
    require_same_shape(n.value, g, "tape accumulate");
    n.grad = g;
    n.grad_touched = true;
  } else {
    k::axpy(1.0, g, n.grad);
  }
}

void Tape::backward(Var loss) {
  check_alive();
  if (!loss.valid() || loss.id >= int(nodes_.size())) throw Error("backward: invalid loss node");
  const Matrix& lv = nodes_[std::size_t(loss.id)].value;
  if (lv.rows() != 1 || lv.cols() != 1)
    throw DimensionError("backward: loss must be 1x1, got " + lv.shape_str());
  for (auto& n : nodes_) {
    n.grad = Matrix();
    n.grad_touched = false;
  }
  accumulate(loss, Matrix(1, 1, 1.0));
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[std::size_t(i)];
    if (n.grad_touched && n.backward) n.backward(*this);
  }
}

void Tape::clear() {
  nodes_.clear();
  params_.clear();
  cleared_ = true;
}

Var Tape::matmul(Var a, Var b) {
  Var out = push(k::matmul(value(a), value(b)), nullptr);
  const int ai = a.id, bi = b.id, oi = out.id;
  A::set_backward(*this, oi, [ai, bi, oi](Tape& t) {
    const Matrix& g = A::grad(t, oi);
    A::accumulate(t, ai, k::matmul(g, k::transpose(A::value(t, bi))));
    A::accumulate(t, bi, k::matmul(k::transpose(A::value(t, ai)), g));
  });
  return out;
}

Var Tape::transpose(Var a) {
  Var out = push(k::transpose(value(a)), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi,
                  [ai, oi](Tape& t) { A::accumulate(t, ai, k::transpose(A::grad(t, oi))); });
  return out;
}

Var Tape::add(Var a, Var b) {
  Var out = push(k::add(value(a), value(b)), nullptr);
  const int ai = a.id, bi = b.id, oi = out.id;
  A::set_backward(*this, oi, [ai, bi, oi](Tape& t) {
    A::accumulate(t, ai, A::grad(t, oi));
    A::accumulate(t, bi, A::grad(t, oi));
  });
  return out;
}

Var Tape::sub(Var a, Var b) {
  Var out = push(k::sub(value(a), value(b)), nullptr);
  const int ai = a.id, bi = b.id, oi = out.id;
  A::set_backward(*this, oi, [ai, bi, oi](Tape& t) {
    A::accumulate(t, ai, A::grad(t, oi));
    A::accumulate(t, bi, k::scale(A::grad(t, oi), -1.0));
  });
  return out;
}

Var Tape::scale(Var a, double c) {
  Var out = push(k::scale(value(a), c), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi,
                  [ai, oi, c](Tape& t) { A::accumulate(t, ai, k::scale(A::grad(t, oi), c)); });
  return out;
}

Var Tape::hadamard(Var a, Var b) {
  Var out = push(k::hadamard(value(a), value(b)), nullptr);
  const int ai = a.id, bi = b.id, oi = out.id;
  A::set_backward(*this, oi, [ai, bi, oi](Tape& t) {
    const Matrix& g = A::grad(t, oi);
    A::accumulate(t, ai, k::hadamard(g, A::value(t, bi)));
    A::accumulate(t, bi, k::hadamard(g, A::value(t, ai)));
  });
  return out;
}

Var Tape::hadamard_const(Var a, Matrix mask) {
  auto m = std::make_shared<Matrix>(std::move(mask));
  Var out = push(k::hadamard(value(a), *m), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi, m](Tape& t) {
    A::accumulate(t, ai, k::hadamard(A::grad(t, oi), *m));
  });
  return out;
}

Var Tape::add_const(Var a, Matrix c) {
  Var out = push(k::add(value(a), c), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi](Tape& t) { A::accumulate(t, ai, A::grad(t, oi)); });
  return out;
}

Var Tape::relu(Var a) {
  Var out = push(k::relu(value(a)), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi](Tape& t) {
    A::accumulate(t, ai, k::relu_bwd(A::value(t, ai), A::grad(t, oi)));
  });
  return out;
}

Var Tape::row_l2_normalize(Var a) {
  auto norms = std::make_shared<std::vector<double>>();
  Var out = push(k::row_l2_normalize(value(a), norms.get()), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi, norms](Tape& t) {
    A::accumulate(t, ai, k::row_l2_normalize_bwd(A::value(t, oi), *norms, A::grad(t, oi)));
  });
  return out;
}

Var Tape::softmax_rows(Var a, double temperature) {
  Var out = push(k::softmax_rows(value(a), temperature), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi, temperature](Tape& t) {
    A::accumulate(t, ai, k::softmax_rows_bwd(A::value(t, oi), temperature, A::grad(t, oi)));
  });
  return out;
}

Var Tape::log_clamped(Var a, double eps) {
  Var out = push(k::log_clamped(value(a), eps), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi, eps](Tape& t) {
    A::accumulate(t, ai, k::log_clamped_bwd(A::value(t, ai), eps, A::grad(t, oi)));
  });
  return out;
}

Var Tape::sum_all(Var a) {
  Var out = push(Matrix(1, 1, k::sum_all(value(a))), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi](Tape& t) {
    const Matrix& src = A::value(t, ai);
    A::accumulate(t, ai, Matrix(src.rows(), src.cols(), A::grad(t, oi)(0, 0)));
  });
  return out;
}

Var Tape::frobenius_sq(Var a) {
  Var out = push(Matrix(1, 1, k::frobenius_sq(value(a))), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi](Tape& t) {
    A::accumulate(t, ai, k::scale(A::value(t, ai), 2.0 * A::grad(t, oi)(0, 0)));
  });
  return out;
}

Var Tape::mean_rows(Var a) {
  Var out = push(k::mean_rows(value(a)), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi](Tape& t) {
    const Matrix& src = A::value(t, ai);
    const Matrix& g = A::grad(t, oi);
    Matrix dx(src.rows(), src.cols());
    const double inv = 1.0 / src.rows();
    for (int i = 0; i < src.rows(); ++i)
      for (int j = 0; j < src.cols(); ++j) dx(i, j) = g(0, j) * inv;
    A::accumulate(t, ai, dx);
  });
  return out;
}

Var Tape::diag_vec(Var a) {
  Var out = push(k::diag_vec(value(a)), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi](Tape& t) {
    const Matrix& src = A::value(t, ai);
    const Matrix& g = A::grad(t, oi);
    Matrix dx(src.rows(), src.cols());
    for (int i = 0; i < src.rows(); ++i) dx(i, i) = g(i, 0);
    A::accumulate(t, ai, dx);
  });
  return out;
}

Var Tape::col_block_sum(Var a, int block) {
  Var out = push(k::col_block_sum(value(a), block), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi, block](Tape& t) {
    A::accumulate(t, ai, k::col_block_sum_bwd(A::grad(t, oi), block));
  });
  return out;
}

Var Tape::concat_rows(Var a, Var b) {
  Var out = push(k::concat_rows(value(a), value(b)), nullptr);
  const int ai = a.id, bi = b.id, oi = out.id;
  A::set_backward(*this, oi, [ai, bi, oi](Tape& t) {
    const Matrix& g = A::grad(t, oi);
    const Matrix& av = A::value(t, ai);
    const Matrix& bv = A::value(t, bi);
    Matrix ga(av.rows(), av.cols()), gb(bv.rows(), bv.cols());
    for (int i = 0; i < av.rows(); ++i)
      for (int j = 0; j < av.cols(); ++j) ga(i, j) = g(i, j);
    for (int i = 0; i < bv.rows(); ++i)
      for (int j = 0; j < bv.cols(); ++j) gb(i, j) = g(av.rows() + i, j);
    A::accumulate(t, ai, ga);
    A::accumulate(t, bi, gb);
  });
  return out;
}

Var Tape::slice_rows(Var a, std::vector<int> idx) {
  auto ix = std::make_shared<std::vector<int>>(std::move(idx));
  Var out = push(k::slice_rows(value(a), *ix), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi, ix](Tape& t) {
    const Matrix& g = A::grad(t, oi);
    const Matrix& src = A::value(t, ai);
    Matrix dx(src.rows(), src.cols());
    for (int i = 0; i < g.rows(); ++i) {
      const int dst = (*ix)[std::size_t(i)];
      for (int j = 0; j < g.cols(); ++j) dx(dst, j) += g(i, j);
    }
    A::accumulate(t, ai, dx);
  });
  return out;
}

Var Tape::add_row_broadcast(Var a, Var bias) {
  Var out = push(k::add_row_broadcast(value(a), value(bias)), nullptr);
  const int ai = a.id, bi = bias.id, oi = out.id;
  A::set_backward(*this, oi, [ai, bi, oi](Tape& t) {
    const Matrix& g = A::grad(t, oi);
    A::accumulate(t, ai, g);
    A::accumulate(t, bi, k::col_sums(g));
  });
  return out;
}

Var Tape::reshape(Var a, int rows, int cols) {
  const Matrix& src = value(a);
  if (std::size_t(rows) * cols != src.size())
    throw DimensionError("reshape: size mismatch " + src.shape_str() + " -> " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  Matrix v(rows, cols);
  for (std::size_t i = 0; i < src.size(); ++i) v.data()[i] = src.data()[i];
  Var out = push(std::move(v), nullptr);
  const int ai = a.id, oi = out.id;
  A::set_backward(*this, oi, [ai, oi](Tape& t) {
    const Matrix& g = A::grad(t, oi);
    const Matrix& src2 = A::value(t, ai);
    Matrix dx(src2.rows(), src2.cols());
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data()[i] = g.data()[i];
    A::accumulate(t, ai, dx);
  });
  return out;
}

Var Tape::stop_gradient(Var a) {
  // Identity forward, no backward: gradients never cross this node.
  return push(value(a), nullptr);
}

Var Tape::im2col(Var a, kernels::ConvGeom g) {
  Var out = push(k::im2col(value(a), g), nullptr);
  const int ai = a.id, oi = out.id;
  const int n = value(a).rows();
  A::set_backward(*this, oi, [ai, oi, g, n](Tape& t) {
    A::accumulate(t, ai, k::col2im(A::grad(t, oi), g, n));
  });
  return out;
}

Var Tape::batchnorm_train(Var x, int channels, Var gamma, Var beta, double eps,
                          std::vector<double>* batch_mean, std::vector<double>* batch_var) {
  auto cache = std::make_shared<k::BnCache>();
  Matrix y = k::batchnorm_train(value(x), channels, value(gamma), value(beta), eps, cache.get());
  if (batch_mean) *batch_mean = cache->mean;
  if (batch_var) *batch_var = cache->var;
  Var out = push(std::move(y), nullptr);
  const int xi = x.id, gi = gamma.id, bi = beta.id, oi = out.id;
  A::set_backward(*this, oi, [xi, gi, bi, oi, channels, cache](Tape& t) {
    Matrix dx, dgamma, dbeta;
    k::batchnorm_bwd(A::grad(t, oi), *cache, channels, A::value(t, gi), &dx, &dgamma, &dbeta);
    A::accumulate(t, xi, dx);
    A::accumulate(t, gi, dgamma);
    A::accumulate(t, bi, dbeta);
  });
  return out;
}

Var Tape::batchnorm_eval(Var x, int channels, Var gamma, Var beta, Matrix run_mean, Matrix run_var,
                         double eps) {
  auto rm = std::make_shared<Matrix>(std::move(run_mean));
  auto rv = std::make_shared<Matrix>(std::move(run_var));
  Matrix y = k::batchnorm_eval(value(x), channels, value(gamma), value(beta), *rm, *rv, eps);
  Var out = push(std::move(y), nullptr);
  const int xi = x.id, gi = gamma.id, bi = beta.id, oi = out.id;
  A::set_backward(*this, oi, [xi, gi, bi, oi, channels, rm, rv, eps](Tape& t) {
    const Matrix& g = A::grad(t, oi);
    const Matrix& xv = A::value(t, xi);
    const Matrix& gam = A::value(t, gi);
    Matrix dx(g.rows(), g.cols());
    Matrix dgamma(1, channels), dbeta(1, channels);
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) {
        const int c = j % channels;
        const double inv = 1.0 / std::sqrt((*rv)(0, c) + eps);
        dx(i, j) = g(i, j) * gam(0, c) * inv;
        dgamma(0, c) += g(i, j) * (xv(i, j) - (*rm)(0, c)) * inv;
        dbeta(0, c) += g(i, j);
      }
    A::accumulate(t, xi, dx);
    A::accumulate(t, gi, dgamma);
    A::accumulate(t, bi, dbeta);
  });
  return out;
}

}  // namespace psgcd
