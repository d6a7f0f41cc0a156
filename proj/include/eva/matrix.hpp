// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace eva {

// Dense row-major matrix of 64-bit floats. The single numeric carrier of the
// library: activation batches, weights, adapter factors and singular-vector
// stacks are all Matrix values. Rows/cols must be >= 1 for any matrix that
// carries data; the default-constructed 0x0 state is only a placeholder.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);  // zero-filled
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;
  void require_finite(const char* what) const;  // throws std::invalid_argument

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool operator==(const Matrix& other) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);
Matrix vstack(const Matrix& top, const Matrix& bottom);

// y = A * x
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

Matrix take_rows(const Matrix& a, std::size_t count);

double frobenius_norm(const Matrix& a);
double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

void scale_in_place(Matrix& a, double factor);
// a += factor * b
void add_scaled_in_place(Matrix& a, const Matrix& b, double factor);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

}  // namespace eva
