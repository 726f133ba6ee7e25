// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mita/mat.h"

namespace mita {

using IndexList = std::vector<std::size_t>;

/// C = A * B. Each C(i, j) is accumulated over the inner index in ascending
/// order, so results do not depend on how callers split rows or columns.
Mat matmul(const Mat& a, const Mat& b);
/// C = A^T * B without materializing A^T.
Mat matmul_tn(const Mat& a, const Mat& b);
/// C = A * B^T without materializing B^T.
Mat matmul_nt(const Mat& a, const Mat& b);

/// Column-wise softmax with per-column max subtraction.
Mat softmax_cols(const Mat& s);
/// In-place variant on an already-validated matrix.
void softmax_cols_inplace(Mat& s);

/// Indices of the min(k, N) largest scores, descending by score, ties to the
/// lower index. Throws on k == 0 or empty scores.
IndexList top_k_indices(std::span<const double> scores, std::size_t k);

/// Column gather; duplicate indices are allowed.
Mat gather_cols(const Mat& m, std::span<const std::size_t> idx);

/// Half-open token window [begin, end) pooled into one landmark.
struct PoolWindow {
  std::size_t begin;
  std::size_t end;
};

/// Adaptive pooling windows: begin_i = floor(i N / m), end_i = ceil((i + 1) N / m).
std::vector<PoolWindow> pool_windows(std::size_t n, std::size_t m);

/// Mean of each window's columns. Requires 1 <= m <= cols.
Mat adaptive_avg_pool(const Mat& q, std::size_t m);
/// Adjoint of adaptive_avg_pool: each pooled column's cotangent is spread
/// uniformly over its window (overlapping windows accumulate).
Mat adaptive_avg_pool_adjoint(const Mat& pooled_grad, std::size_t n);

}  // namespace mita
