// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace mita {

/// Dense real matrix in row-major storage.
///
/// Attention operands use a column-per-token layout: a d x N matrix holds one
/// d-dimensional feature vector per token column. Row-major storage keeps each
/// feature row contiguous across tokens, which is what the inner loops of
/// matmul and the attention kernels stream over.
///
/// A default-constructed Mat is empty (0 x 0) and only serves as an unset
/// placeholder; every sized constructor requires rows >= 1 and cols >= 1.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0);
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data);

  /// Builds from nested rows; rejects ragged or non-finite input.
  static Mat from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Mat identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  /// Bounds-checked access; throws std::out_of_range.
  double at(std::size_t i, std::size_t j) const;

  double* row_ptr(std::size_t i) { return data_.data() + i * cols_; }
  const double* row_ptr(std::size_t i) const { return data_.data() + i * cols_; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  std::vector<double> col(std::size_t j) const;
  void set_col(std::size_t j, std::span<const double> values);

  /// Rows [begin, begin + count) as a new matrix.
  Mat row_block(std::size_t begin, std::size_t count) const;
  void set_row_block(std::size_t begin, const Mat& block);

  Mat transpose() const;

  bool all_finite() const;
  /// Throws std::invalid_argument naming `what` if any entry is NaN/Inf.
  void require_finite(const char* what) const;

  Mat& operator+=(const Mat& other);
  Mat& operator-=(const Mat& other);
  Mat& operator*=(double s);

  friend bool operator==(const Mat& a, const Mat& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Mat operator+(Mat a, const Mat& b);
Mat operator-(Mat a, const Mat& b);
Mat operator*(Mat a, double s);

/// Largest absolute entry-wise difference; shapes must agree.
double max_abs_diff(const Mat& a, const Mat& b);

std::string shape_str(const Mat& m);

}  // namespace mita
