// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "mita/mat.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mita {

namespace {

void require_positive_dims(std::size_t rows, std::size_t cols) {
  if (rows == 0 || cols == 0) {
    throw std::invalid_argument("Mat: dimensions must be positive, got " + std::to_string(rows) +
                                "x" + std::to_string(cols));
  }
}

void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
  }
}

}  // namespace

Mat::Mat(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {
  require_positive_dims(rows, cols);
}

Mat::Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require_positive_dims(rows, cols);
  if (data_.size() != rows * cols) {
    throw std::invalid_argument("Mat: data length " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows) + "x" +
                                std::to_string(cols));
  }
}

Mat Mat::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  if (rows.size() == 0) throw std::invalid_argument("Mat::from_rows: no rows");
  const std::size_t cols = rows.begin()->size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw std::invalid_argument("Mat::from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  Mat m(rows.size(), cols, std::move(data));
  m.require_finite("Mat::from_rows");
  return m;
}

Mat Mat::identity(std::size_t n) {
  Mat m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

double Mat::at(std::size_t i, std::size_t j) const {
  if (i >= rows_ || j >= cols_) {
    throw std::out_of_range("Mat::at(" + std::to_string(i) + ", " + std::to_string(j) +
                            ") outside " + shape_str(*this));
  }
  return (*this)(i, j);
}

std::vector<double> Mat::col(std::size_t j) const {
  std::vector<double> out(rows_);
  for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
  return out;
}

void Mat::set_col(std::size_t j, std::span<const double> values) {
  if (values.size() != rows_) throw std::invalid_argument("Mat::set_col: length mismatch");
  for (std::size_t i = 0; i < rows_; ++i) (*this)(i, j) = values[i];
}

Mat Mat::row_block(std::size_t begin, std::size_t count) const {
  if (begin + count > rows_) throw std::out_of_range("Mat::row_block: range outside matrix");
  Mat out(count, cols_);
  std::copy(row_ptr(begin), row_ptr(begin) + count * cols_, out.data_.begin());
  return out;
}

void Mat::set_row_block(std::size_t begin, const Mat& block) {
  if (block.cols_ != cols_ || begin + block.rows_ > rows_) {
    throw std::invalid_argument("Mat::set_row_block: block " + shape_str(block) +
                                " does not fit at row " + std::to_string(begin) + " of " +
                                shape_str(*this));
  }
  std::copy(block.data_.begin(), block.data_.end(), row_ptr(begin));
}

Mat Mat::transpose() const {
  Mat t(cols_, rows_);
  for (std::size_t i = 0; i < rows_; ++i)
    for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

bool Mat::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

void Mat::require_finite(const char* what) const {
  if (!all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite entry");
}

Mat& Mat::operator+=(const Mat& other) {
  require_same_shape(*this, other, "Mat::operator+=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Mat& Mat::operator-=(const Mat& other) {
  require_same_shape(*this, other, "Mat::operator-=");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= other.data_[i];
  return *this;
}

Mat& Mat::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Mat operator+(Mat a, const Mat& b) { return a += b; }
Mat operator-(Mat a, const Mat& b) { return a -= b; }
Mat operator*(Mat a, double s) { return a *= s; }

double max_abs_diff(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) worst = std::max(worst, std::abs(da[i] - db[i]));
  return worst;
}

std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace mita
