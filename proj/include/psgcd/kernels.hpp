#pragma once

#include <vector>

#include "psgcd/matrix.hpp"

namespace psgcd::kernels {

// Geometry of a 2-D convolution over channels-last sample rows ([h][w][c]).
struct ConvGeom {
  int h = 0, w = 0, c = 0;
  int kernel = 1, stride = 1, pad = 0;
  int out_h = 0, out_w = 0;

  int in_cols() const { return h * w * c; }
  int patch_cols() const { return kernel * kernel * c; }
  int out_positions() const { return out_h * out_w; }

  // 'same'-style zero padding for odd kernels.
  static ConvGeom make(int h, int w, int c, int kernel, int stride);
};

// ---------------------------------------------------------------------------
// Parallel kernels. Each parallelizes over independent output elements with a
// fixed per-element reduction order, so results are bitwise identical to the
// serial reference for any thread count.
// ---------------------------------------------------------------------------
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& scores, double temperature);
Matrix row_l2_normalize(const Matrix& x, std::vector<double>* norms = nullptr);
Matrix im2col(const Matrix& x, const ConvGeom& g);

namespace ref {
// Serial reference implementations, kept for tests and the benchmark tool.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix softmax_rows(const Matrix& scores, double temperature);
Matrix row_l2_normalize(const Matrix& x, std::vector<double>* norms = nullptr);
Matrix im2col(const Matrix& x, const ConvGeom& g);
}  // namespace ref

// ---------------------------------------------------------------------------
// Elementwise / reduction helpers. Reductions run in a fixed serial order.
// ---------------------------------------------------------------------------
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double c);
void axpy(double a, const Matrix& x, Matrix& y);  // y += a*x

Matrix relu(const Matrix& x);
Matrix relu_bwd(const Matrix& x, const Matrix& g);

Matrix softmax_rows_bwd(const Matrix& p, double temperature, const Matrix& g);
Matrix row_l2_normalize_bwd(const Matrix& y, const std::vector<double>& norms, const Matrix& g);

Matrix log_clamped(const Matrix& x, double eps);
Matrix log_clamped_bwd(const Matrix& x, double eps, const Matrix& g);

double sum_all(const Matrix& a);
double frobenius_sq(const Matrix& a);
Matrix mean_rows(const Matrix& a);  // 1 x cols, column means
Matrix col_sums(const Matrix& a);   // 1 x cols

Matrix diag_vec(const Matrix& a);  // n x 1 from square a

// Sums each group of `block` consecutive columns; cols % block == 0.
Matrix col_block_sum(const Matrix& a, int block);
Matrix col_block_sum_bwd(const Matrix& g, int block);

Matrix concat_rows(const Matrix& a, const Matrix& b);
Matrix slice_rows(const Matrix& a, const std::vector<int>& idx);
Matrix add_row_broadcast(const Matrix& a, const Matrix& row);

Matrix col2im(const Matrix& cols, const ConvGeom& g, int n_samples);

// ---------------------------------------------------------------------------
// Batch normalization over channel groups: column j belongs to channel
// j % channels, statistics pool over every (row, repetition) position. Dense
// layers use channels == cols; channels-last conv outputs use the channel
// count.
// ---------------------------------------------------------------------------
struct BnCache {
  Matrix xhat;
  std::vector<double> inv_std;
  std::vector<double> mean;
  std::vector<double> var;  // biased
};

Matrix batchnorm_train(const Matrix& x, int channels, const Matrix& gamma, const Matrix& beta,
                       double eps, BnCache* cache);
void batchnorm_bwd(const Matrix& g, const BnCache& cache, int channels, const Matrix& gamma,
                   Matrix* dx, Matrix* dgamma, Matrix* dbeta);
Matrix batchnorm_eval(const Matrix& x, int channels, const Matrix& gamma, const Matrix& beta,
                      const Matrix& run_mean, const Matrix& run_var, double eps);

}  // namespace psgcd::kernels
