#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

namespace psgcd {

// Dense row-major float64 matrix. Row vectors double as embeddings and
// per-sample score rows throughout the library.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(std::size_t(rows) * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  bool empty() const { return data_.empty(); }
  std::size_t size() const { return data_.size(); }

  double& operator()(int r, int c) { return data_[std::size_t(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[std::size_t(r) * cols_ + c]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(int r) { return data_.data() + std::size_t(r) * cols_; }
  const double* row(int r) const { return data_.data() + std::size_t(r) * cols_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

bool all_finite(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

// Throws DimensionError naming both shapes when a and b differ.
void require_same_shape(const Matrix& a, const Matrix& b, const char* op);

}  // namespace psgcd
