// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "mita/reference.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "mita/ops.h"

namespace mita {

void check_attention_operands(const Mat& q, const Mat& k, const Mat& v, const char* where) {
  if (q.empty() || k.empty() || v.empty()) {
    throw std::invalid_argument(std::string(where) + ": empty operand");
  }
  if (q.rows() != k.rows() || k.rows() != v.rows()) {
    throw std::invalid_argument(std::string(where) + ": Q, K, V must share row count (got " +
                                shape_str(q) + ", " + shape_str(k) + ", " + shape_str(v) + ")");
  }
  if (k.cols() != v.cols()) {
    throw std::invalid_argument(std::string(where) + ": K and V column counts differ (" +
                                shape_str(k) + " vs " + shape_str(v) + ")");
  }
  q.require_finite(where);
  k.require_finite(where);
  v.require_finite(where);
}

void AttentionInput::validate() const { check_attention_operands(q, k, v, "AttentionInput"); }

Mat full_attention(const Mat& q, const Mat& k, const Mat& v) {
  check_attention_operands(q, k, v, "full_attention");
  Mat scores = matmul_tn(k, q);
  scores *= 1.0 / std::sqrt(static_cast<double>(q.rows()));
  softmax_cols_inplace(scores);
  return matmul(v, scores);
}

Mat fast_weight_mlp(const Mat& q, const Mat& k, const Mat& v) {
  check_attention_operands(q, k, v, "fast_weight_mlp");
  const std::size_t d = q.rows();
  const std::size_t n = k.cols();
  const Mat k_hat = k * (1.0 / std::sqrt(static_cast<double>(d)));
  Mat out(d, q.cols());
  std::vector<double> hidden(n);
  for (std::size_t j = 0; j < q.cols(); ++j) {
    // First layer: pre-activations K_hat^T q.
    for (std::size_t t = 0; t < n; ++t) {
      double acc = 0.0;
      for (std::size_t i = 0; i < d; ++i) acc += k_hat(i, t) * q(i, j);
      hidden[t] = acc;
    }
    const double shift = *std::max_element(hidden.begin(), hidden.end());
    double partition = 0.0;
    for (double& h : hidden) {
      h = std::exp(h - shift);
      partition += h;
    }
    // Second layer: V_hat = V / partition applied to the activations.
    for (std::size_t i = 0; i < d; ++i) {
      double acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) acc += (v(i, t) / partition) * hidden[t];
      out(i, j) = acc;
    }
  }
  return out;
}

Mat multi_head(const Mat& q, const Mat& k, const Mat& v, std::size_t heads,
               const AttentionFn& mech) {
  if (heads == 0 || q.rows() % heads != 0) {
    throw std::invalid_argument("multi_head: model dim " + std::to_string(q.rows()) +
                                " not divisible by " + std::to_string(heads) + " heads");
  }
  if (k.rows() != q.rows() || v.rows() != q.rows()) {
    throw std::invalid_argument("multi_head: Q, K, V must share row count");
  }
  const std::size_t d = q.rows() / heads;
  Mat out;
  for (std::size_t h = 0; h < heads; ++h) {
    Mat head_out = mech(q.row_block(h * d, d), k.row_block(h * d, d), v.row_block(h * d, d));
    if (out.empty()) out = Mat(q.rows(), head_out.cols());
    if (head_out.rows() != d || head_out.cols() != out.cols()) {
      throw std::invalid_argument("multi_head: mechanism returned " + shape_str(head_out));
    }
    out.set_row_block(h * d, head_out);
  }
  return out;
}

}  // namespace mita
