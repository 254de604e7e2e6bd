#include "psgcd/kernels.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "psgcd/errors.hpp"

namespace psgcd::kernels {

namespace {

void require_cols_rows(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ, " + a.shape_str() + " x " +
                         b.shape_str());
}

void require_temperature(double t) {
  if (!(t > 0.0)) {
    std::ostringstream os;
    os << "softmax_rows: temperature must be > 0, got " << t;
    throw ConfigError(os.str());
  }
}

inline void matmul_row(const Matrix& a, const Matrix& b, Matrix& c, int i) {
  const int n = a.cols(), m = b.cols();
  double* crow = c.row(i);
  const double* arow = a.row(i);
  for (int k = 0; k < n; ++k) {
    const double aik = arow[k];
    const double* brow = b.row(k);
    for (int j = 0; j < m; ++j) crow[j] += aik * brow[j];
  }
}

inline void softmax_row(const Matrix& s, Matrix& p, int i, double inv_t) {
  const int k = s.cols();
  const double* in = s.row(i);
  double* out = p.row(i);
  double mx = in[0];
  for (int j = 1; j < k; ++j) mx = std::max(mx, in[j]);
  double total = 0.0;
  for (int j = 0; j < k; ++j) {
    out[j] = std::exp((in[j] - mx) * inv_t);
    total += out[j];
  }
  const double inv = 1.0 / total;
  for (int j = 0; j < k; ++j) out[j] *= inv;
}

// Exceptions cannot cross an OpenMP region, so degenerate rows are reported
// back through the returned norm and raised after the loop.
inline double normalize_row(const Matrix& x, Matrix& y, int i) {
  const int c = x.cols();
  const double* in = x.row(i);
  double* out = y.row(i);
  double sq = 0.0;
  for (int j = 0; j < c; ++j) sq += in[j] * in[j];
  const double norm = std::sqrt(sq);
  if (norm < 1e-12) return norm;
  const double inv = 1.0 / norm;
  for (int j = 0; j < c; ++j) out[j] = in[j] * inv;
  return norm;
}

void raise_degenerate_rows(const std::vector<double>& norms) {
  for (std::size_t i = 0; i < norms.size(); ++i)
    if (norms[i] < 1e-12) {
      std::ostringstream os;
      os << "row_l2_normalize: row " << i << " has near-zero norm " << norms[i];
      throw DegenerateInputError(os.str());
    }
}

// Source column index in x for one im2col output element; -1 when padded.
inline long long im2col_src(const ConvGeom& g, int pos, int col) {
  const int ow = pos % g.out_w, oh = pos / g.out_w;
  const int ch = col % g.c;
  const int kw = (col / g.c) % g.kernel;
  const int kh = col / (g.c * g.kernel);
  const int ih = oh * g.stride - g.pad + kh;
  const int iw = ow * g.stride - g.pad + kw;
  if (ih < 0 || ih >= g.h || iw < 0 || iw >= g.w) return -1;
  return (static_cast<long long>(ih) * g.w + iw) * g.c + ch;
}

}  // namespace

ConvGeom ConvGeom::make(int h, int w, int c, int kernel, int stride) {
  if (kernel < 1 || kernel % 2 == 0)
    throw ConfigError("conv kernel must be odd and >= 1, got " + std::to_string(kernel));
  if (stride < 1) throw ConfigError("conv stride must be >= 1");
  ConvGeom g;
  g.h = h;
  g.w = w;
  g.c = c;
  g.kernel = kernel;
  g.stride = stride;
  g.pad = (kernel - 1) / 2;
  g.out_h = (h + 2 * g.pad - kernel) / stride + 1;
  g.out_w = (w + 2 * g.pad - kernel) / stride + 1;
  return g;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_cols_rows(a, b);
  Matrix c(a.rows(), b.cols());
#pragma omp parallel for schedule(static) if (a.rows() > 15)
  for (int i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
  return c;
}

Matrix softmax_rows(const Matrix& s, double temperature) {
  require_temperature(temperature);
  Matrix p(s.rows(), s.cols());
  const double inv_t = 1.0 / temperature;
#pragma omp parallel for schedule(static) if (s.rows() > 63)
  for (int i = 0; i < s.rows(); ++i) softmax_row(s, p, i, inv_t);
  return p;
}

Matrix row_l2_normalize(const Matrix& x, std::vector<double>* norms) {
  Matrix y(x.rows(), x.cols());
  std::vector<double> n(std::size_t(x.rows()), 0.0);
#pragma omp parallel for schedule(static) if (x.rows() > 63)
  for (int i = 0; i < x.rows(); ++i) n[std::size_t(i)] = normalize_row(x, y, i);
  raise_degenerate_rows(n);
  if (norms) *norms = std::move(n);
  return y;
}

Matrix im2col(const Matrix& x, const ConvGeom& g) {
  if (x.cols() != g.in_cols())
    throw DimensionError("im2col: expected " + std::to_string(g.in_cols()) + " cols, got " +
                         x.shape_str());
  const int positions = g.out_positions(), pc = g.patch_cols();
  Matrix out(x.rows() * positions, pc);
#pragma omp parallel for schedule(static) if (x.rows() > 3)
  for (int s = 0; s < x.rows(); ++s) {
    const double* src = x.row(s);
    for (int pos = 0; pos < positions; ++pos) {
      double* dst = out.row(s * positions + pos);
      for (int col = 0; col < pc; ++col) {
        const long long si = im2col_src(g, pos, col);
        dst[col] = si < 0 ? 0.0 : src[si];
      }
    }
  }
  return out;
}

namespace ref {

Matrix matmul(const Matrix& a, const Matrix& b) {
  require_cols_rows(a, b);
  Matrix c(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) matmul_row(a, b, c, i);
  return c;
}

Matrix softmax_rows(const Matrix& s, double temperature) {
  require_temperature(temperature);
  Matrix p(s.rows(), s.cols());
  const double inv_t = 1.0 / temperature;
  for (int i = 0; i < s.rows(); ++i) softmax_row(s, p, i, inv_t);
  return p;
}

Matrix row_l2_normalize(const Matrix& x, std::vector<double>* norms) {
  Matrix y(x.rows(), x.cols());
  std::vector<double> n(std::size_t(x.rows()), 0.0);
  for (int i = 0; i < x.rows(); ++i) n[std::size_t(i)] = normalize_row(x, y, i);
  raise_degenerate_rows(n);
  if (norms) *norms = std::move(n);
  return y;
}

Matrix im2col(const Matrix& x, const ConvGeom& g) {
  if (x.cols() != g.in_cols())
    throw DimensionError("im2col: expected " + std::to_string(g.in_cols()) + " cols, got " +
                         x.shape_str());
  const int positions = g.out_positions(), pc = g.patch_cols();
  Matrix out(x.rows() * positions, pc);
  for (int s = 0; s < x.rows(); ++s) {
    const double* src = x.row(s);
    for (int pos = 0; pos < positions; ++pos) {
      double* dst = out.row(s * positions + pos);
      for (int col = 0; col < pc; ++col) {
        const long long si = im2col_src(g, pos, col);
        dst[col] = si < 0 ? 0.0 : src[si];
      }
    }
  }
  return out;
}

}  // namespace ref

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] + b.data()[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] - b.data()[i];
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "hadamard");
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
  return c;
}

Matrix scale(const Matrix& a, double c) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out.data()[i] = a.data()[i] * c;
  return out;
}

void axpy(double a, const Matrix& x, Matrix& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] += a * x.data()[i];
}

Matrix relu(const Matrix& x) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  return y;
}

Matrix relu_bwd(const Matrix& x, const Matrix& g) {
  require_same_shape(x, g, "relu_bwd");
  Matrix dx(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) dx.data()[i] = x.data()[i] > 0.0 ? g.data()[i] : 0.0;
  return dx;
}

Matrix softmax_rows_bwd(const Matrix& p, double temperature, const Matrix& g) {
  require_same_shape(p, g, "softmax_rows_bwd");
  Matrix dx(p.rows(), p.cols());
  const double inv_t = 1.0 / temperature;
  for (int i = 0; i < p.rows(); ++i) {
    double dot = 0.0;
    for (int j = 0; j < p.cols(); ++j) dot += g(i, j) * p(i, j);
    for (int j = 0; j < p.cols(); ++j) dx(i, j) = inv_t * p(i, j) * (g(i, j) - dot);
  }
  return dx;
}

Matrix row_l2_normalize_bwd(const Matrix& y, const std::vector<double>& norms, const Matrix& g) {
  require_same_shape(y, g, "row_l2_normalize_bwd");
  Matrix dx(y.rows(), y.cols());
  for (int i = 0; i < y.rows(); ++i) {
    double dot = 0.0;
    for (int j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
    const double inv = 1.0 / norms[std::size_t(i)];
    for (int j = 0; j < y.cols(); ++j) dx(i, j) = (g(i, j) - dot * y(i, j)) * inv;
  }
  return dx;
}

Matrix log_clamped(const Matrix& x, double eps) {
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y.data()[i] = std::log(std::max(x.data()[i], eps));
  return y;
}

Matrix log_clamped_bwd(const Matrix& x, double eps, const Matrix& g) {
  require_same_shape(x, g, "log_clamped_bwd");
  Matrix dx(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i)
    dx.data()[i] = x.data()[i] > eps ? g.data()[i] / x.data()[i] : 0.0;
  return dx;
}

double sum_all(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i];
  return s;
}

double frobenius_sq(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
  return s;
}

Matrix mean_rows(const Matrix& a) {
  if (a.rows() == 0) throw DegenerateInputError("mean_rows: empty matrix");
  Matrix m(1, a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) m(0, j) += a(i, j);
  const double inv = 1.0 / a.rows();
  for (int j = 0; j < a.cols(); ++j) m(0, j) *= inv;
  return m;
}

Matrix col_sums(const Matrix& a) {
  Matrix m(1, a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) m(0, j) += a(i, j);
  return m;
}

Matrix diag_vec(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionError("diag_vec: matrix not square, " + a.shape_str());
  Matrix d(a.rows(), 1);
  for (int i = 0; i < a.rows(); ++i) d(i, 0) = a(i, i);
  return d;
}

Matrix col_block_sum(const Matrix& a, int block) {
  if (block < 1 || a.cols() % block != 0)
    throw DimensionError("col_block_sum: cols " + std::to_string(a.cols()) +
                         " not divisible by block " + std::to_string(block));
  const int groups = a.cols() / block;
  Matrix out(a.rows(), groups);
  for (int i = 0; i < a.rows(); ++i)
    for (int g = 0; g < groups; ++g) {
      double s = 0.0;
      for (int j = 0; j < block; ++j) s += a(i, g * block + j);
      out(i, g) = s;
    }
  return out;
}

Matrix col_block_sum_bwd(const Matrix& g, int block) {
  Matrix dx(g.rows(), g.cols() * block);
  for (int i = 0; i < g.rows(); ++i)
    for (int k = 0; k < g.cols(); ++k)
      for (int j = 0; j < block; ++j) dx(i, k * block + j) = g(i, k);
  return dx;
}

Matrix concat_rows(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("concat_rows: col mismatch " + a.shape_str() + " vs " + b.shape_str());
  Matrix c(a.rows() + b.rows(), a.cols());
  std::memcpy(c.data(), a.data(), a.size() * sizeof(double));
  std::memcpy(c.data() + a.size(), b.data(), b.size() * sizeof(double));
  return c;
}

Matrix slice_rows(const Matrix& a, const std::vector<int>& idx) {
  Matrix out(int(idx.size()), a.cols());
  for (int i = 0; i < out.rows(); ++i) {
    const int src = idx[std::size_t(i)];
    if (src < 0 || src >= a.rows())
      throw DimensionError("slice_rows: index " + std::to_string(src) + " out of range for " +
                           a.shape_str());
    std::memcpy(out.row(i), a.row(src), std::size_t(a.cols()) * sizeof(double));
  }
  return out;
}

Matrix add_row_broadcast(const Matrix& a, const Matrix& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw DimensionError("add_row_broadcast: bias " + row.shape_str() + " vs " + a.shape_str());
  Matrix c(a.rows(), a.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) c(i, j) = a(i, j) + row(0, j);
  return c;
}

Matrix col2im(const Matrix& cols, const ConvGeom& g, int n_samples) {
  const int positions = g.out_positions(), pc = g.patch_cols();
  if (cols.rows() != n_samples * positions || cols.cols() != pc)
    throw DimensionError("col2im: unexpected shape " + cols.shape_str());
  Matrix x(n_samples, g.in_cols());
#pragma omp parallel for schedule(static) if (n_samples > 3)
  for (int s = 0; s < n_samples; ++s) {
    double* dst = x.row(s);
    for (int pos = 0; pos < positions; ++pos) {
      const double* src = cols.row(s * positions + pos);
      for (int col = 0; col < pc; ++col) {
        const long long si = im2col_src(g, pos, col);
        if (si >= 0) dst[si] += src[col];
      }
    }
  }
  return x;
}

Matrix batchnorm_train(const Matrix& x, int channels, const Matrix& gamma, const Matrix& beta,
                       double eps, BnCache* cache) {
  if (x.cols() % channels != 0)
    throw DimensionError("batchnorm: cols " + std::to_string(x.cols()) +
                         " not divisible by channels " + std::to_string(channels));
  if (gamma.cols() != channels || beta.cols() != channels)
    throw DimensionError("batchnorm: gamma/beta must have one entry per channel");
  const int reps = x.cols() / channels;
  const double count = double(x.rows()) * reps;
  if (count < 2) throw DegenerateInputError("batchnorm: needs at least 2 positions per channel");

  std::vector<double> mean(std::size_t(channels), 0.0), var(std::size_t(channels), 0.0);
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) mean[std::size_t(j % channels)] += x(i, j);
  for (int c = 0; c < channels; ++c) mean[std::size_t(c)] /= count;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) {
      const double d = x(i, j) - mean[std::size_t(j % channels)];
      var[std::size_t(j % channels)] += d * d;
    }
  for (int c = 0; c < channels; ++c) var[std::size_t(c)] /= count;

  std::vector<double> inv_std(std::size_t(channels), 0.0);
  for (int c = 0; c < channels; ++c)
    inv_std[std::size_t(c)] = 1.0 / std::sqrt(var[std::size_t(c)] + eps);

  Matrix xhat(x.rows(), x.cols()), y(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) {
      const int c = j % channels;
      xhat(i, j) = (x(i, j) - mean[std::size_t(c)]) * inv_std[std::size_t(c)];
      y(i, j) = gamma(0, c) * xhat(i, j) + beta(0, c);
    }
  if (cache) {
    cache->xhat = xhat;
    cache->inv_std = std::move(inv_std);
    cache->mean = std::move(mean);
    cache->var = std::move(var);
  }
  return y;
}

void batchnorm_bwd(const Matrix& g, const BnCache& cache, int channels, const Matrix& gamma,
                   Matrix* dx, Matrix* dgamma, Matrix* dbeta) {
  const Matrix& xhat = cache.xhat;
  require_same_shape(g, xhat, "batchnorm_bwd");
  const int reps = g.cols() / channels;
  const double count = double(g.rows()) * reps;

  Matrix dg(1, channels), db(1, channels);
  for (int i = 0; i < g.rows(); ++i)
    for (int j = 0; j < g.cols(); ++j) {
      const int c = j % channels;
      dg(0, c) += g(i, j) * xhat(i, j);
      db(0, c) += g(i, j);
    }

  if (dx) {
    *dx = Matrix(g.rows(), g.cols());
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) {
        const int c = j % channels;
        const double mg = db(0, c) / count;
        const double mgx = dg(0, c) / count;
        (*dx)(i, j) =
            gamma(0, c) * cache.inv_std[std::size_t(c)] * (g(i, j) - mg - xhat(i, j) * mgx);
      }
  }
  if (dgamma) *dgamma = std::move(dg);
  if (dbeta) *dbeta = std::move(db);
}

Matrix batchnorm_eval(const Matrix& x, int channels, const Matrix& gamma, const Matrix& beta,
                      const Matrix& run_mean, const Matrix& run_var, double eps) {
  if (x.cols() % channels != 0)
    throw DimensionError("batchnorm: cols not divisible by channels");
  Matrix y(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) {
      const int c = j % channels;
      y(i, j) = gamma(0, c) * (x(i, j) - run_mean(0, c)) / std::sqrt(run_var(0, c) + eps) +
                beta(0, c);
    }
  return y;
}

}  // namespace psgcd::kernels
