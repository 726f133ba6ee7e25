// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "mita/ops.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

namespace mita {

namespace {

void require_inner(std::size_t lhs, std::size_t rhs, const char* op, const Mat& a, const Mat& b) {
  if (lhs != rhs) {
    throw std::invalid_argument(std::string(op) + ": inner dimensions disagree (" + shape_str(a) +
                                " and " + shape_str(b) + ")");
  }
}

}  // namespace

namespace {

#if defined(__AVX512F__)
constexpr std::size_t kLanes = 8;
#elif defined(__AVX__)
constexpr std::size_t kLanes = 4;
#else
constexpr std::size_t kLanes = 2;
#endif
typedef double Lanes __attribute__((vector_size(kLanes * sizeof(double))));

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 2 * kLanes;

Lanes load(const double* p) {
  Lanes v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

void store(double* p, Lanes v) { std::memcpy(p, &v, sizeof(v)); }

// C[0:4, 0:2L] = A[0:4, :] B[:, 0:2L] with all eight accumulators held in
// registers. The inner index runs in ascending order.
void tile(const double* a, std::size_t lda, const double* b, std::size_t ldb, double* c,
          std::size_t ldc, std::size_t inner) {
  const double* a0 = a;
  const double* a1 = a + lda;
  const double* a2 = a + 2 * lda;
  const double* a3 = a + 3 * lda;
  Lanes c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
  for (std::size_t t = 0; t < inner; ++t) {
    const double* brow = b + t * ldb;
    const Lanes b0 = load(brow);
    const Lanes b1 = load(brow + kLanes);
    c00 += a0[t] * b0;
    c01 += a0[t] * b1;
    c10 += a1[t] * b0;
    c11 += a1[t] * b1;
    c20 += a2[t] * b0;
    c21 += a2[t] * b1;
    c30 += a3[t] * b0;
    c31 += a3[t] * b1;
  }
  store(c, c00);
  store(c + kLanes, c01);
  store(c + ldc, c10);
  store(c + ldc + kLanes, c11);
  store(c + 2 * ldc, c20);
  store(c + 2 * ldc + kLanes, c21);
  store(c + 3 * ldc, c30);
  store(c + 3 * ldc + kLanes, c31);
}

}  // namespace

// Ragged edges are zero-padded into full tiles, so every entry of C goes
// through the same kernel and the same summation order. Narrow products skip
// the tiling.
Mat matmul(const Mat& a, const Mat& b) {
  require_inner(a.cols(), b.rows(), "matmul", a, b);
  const std::size_t rows = a.rows();
  const std::size_t cols = b.cols();
  const std::size_t inner = a.cols();
  Mat c(rows, cols);
  if (cols < kTileCols || rows < kTileRows) {
    for (std::size_t i = 0; i < rows; ++i) {
      const double* arow = a.row_ptr(i);
      double* crow = c.row_ptr(i);
      for (std::size_t t = 0; t < inner; ++t) {
        const double* brow = b.row_ptr(t);
        const double x = arow[t];
        for (std::size_t j = 0; j < cols; ++j) crow[j] += x * brow[j];
      }
    }
    return c;
  }
  const std::size_t row_tiles = (rows + kTileRows - 1) / kTileRows;
  const std::size_t col_tiles = (cols + kTileCols - 1) / kTileCols;
  const std::size_t col_full = cols / kTileCols;
  const std::size_t col_rem = cols - col_full * kTileCols;

  std::vector<double> b_pad;
  if (col_rem > 0) {
    b_pad.assign(inner * kTileCols, 0.0);
    for (std::size_t t = 0; t < inner; ++t) {
      std::copy_n(b.row_ptr(t) + col_full * kTileCols, col_rem, b_pad.data() + t * kTileCols);
    }
  }
  std::vector<double> a_pad;
  double c_pad[kTileRows * kTileCols];

  for (std::size_t it = 0; it < row_tiles; ++it) {
    const std::size_t i0 = it * kTileRows;
    const std::size_t r = std::min(kTileRows, rows - i0);
    const double* a_ptr = a.row_ptr(i0);
    if (r < kTileRows) {
      a_pad.assign(kTileRows * inner, 0.0);
      std::copy_n(a.row_ptr(i0), r * inner, a_pad.data());
      a_ptr = a_pad.data();
    }
    for (std::size_t jt = 0; jt < col_tiles; ++jt) {
      const std::size_t j0 = jt * kTileCols;
      const bool ragged = jt == col_full;
      const double* b_ptr = ragged ? b_pad.data() : b.row_ptr(0) + j0;
      const std::size_t ldb = ragged ? kTileCols : cols;
      if (r == kTileRows && !ragged) {
        tile(a_ptr, inner, b_ptr, ldb, c.row_ptr(i0) + j0, cols, inner);
        continue;
      }
      tile(a_ptr, inner, b_ptr, ldb, c_pad, kTileCols, inner);
      const std::size_t w = ragged ? col_rem : kTileCols;
      for (std::size_t rr = 0; rr < r; ++rr) {
        std::copy_n(c_pad + rr * kTileCols, w, c.row_ptr(i0 + rr) + j0);
      }
    }
  }
  return c;
}

Mat matmul_tn(const Mat& a, const Mat& b) {
  require_inner(a.rows(), b.rows(), "matmul_tn", a, b);
  if (b.cols() >= kTileCols && a.cols() >= kTileRows) return matmul(a.transpose(), b);
  Mat c(a.cols(), b.cols());
  for (std::size_t t = 0; t < a.rows(); ++t) {
    const double* arow = a.row_ptr(t);
    const double* brow = b.row_ptr(t);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double x = arow[i];
      double* crow = c.row_ptr(i);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += x * brow[j];
    }
  }
  return c;
}

Mat matmul_nt(const Mat& a, const Mat& b) {
  require_inner(a.cols(), b.cols(), "matmul_nt", a, b);
  if (b.rows() >= kTileCols && a.rows() >= kTileRows) return matmul(a, b.transpose());
  Mat c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row_ptr(j);
      double acc = 0.0;
      for (std::size_t t = 0; t < a.cols(); ++t) acc += arow[t] * brow[t];
      crow[j] = acc;
    }
  }
  return c;
}

void softmax_cols_inplace(Mat& s) {
  const std::size_t p = s.rows();
  const std::size_t n = s.cols();
  std::vector<double> col_max(n, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < p; ++i) {
    const double* row = s.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) col_max[j] = std::max(col_max[j], row[j]);
  }
  std::vector<double> col_sum(n, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    double* row = s.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - col_max[j]);
      col_sum[j] += row[j];
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    double* row = s.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) row[j] /= col_sum[j];
  }
}

Mat softmax_cols(const Mat& s) {
  s.require_finite("softmax_cols");
  Mat out = s;
  softmax_cols_inplace(out);
  return out;
}

IndexList top_k_indices(std::span<const double> scores, std::size_t k) {
  if (k == 0) throw std::invalid_argument("top_k_indices: k must be positive");
  if (scores.empty()) throw std::invalid_argument("top_k_indices: empty scores");
  for (double x : scores) {
    if (!std::isfinite(x)) throw std::invalid_argument("top_k_indices: non-finite score");
  }
  const std::size_t take = std::min(k, scores.size());
  IndexList idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  auto before = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  const auto head = idx.begin() + static_cast<std::ptrdiff_t>(take);
  if (take < idx.size()) std::nth_element(idx.begin(), head, idx.end(), before);
  std::sort(idx.begin(), head, before);
  idx.resize(take);
  return idx;
}

Mat gather_cols(const Mat& m, std::span<const std::size_t> idx) {
  if (idx.empty()) throw std::invalid_argument("gather_cols: empty index list");
  for (std::size_t j : idx) {
    if (j >= m.cols()) {
      throw std::out_of_range("gather_cols: index " + std::to_string(j) + " outside " +
                              std::to_string(m.cols()) + " columns");
    }
  }
  Mat out(m.rows(), idx.size());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double* src = m.row_ptr(i);
    double* dst = out.row_ptr(i);
    for (std::size_t j = 0; j < idx.size(); ++j) dst[j] = src[idx[j]];
  }
  return out;
}

std::vector<PoolWindow> pool_windows(std::size_t n, std::size_t m) {
  if (m == 0 || m > n) {
    throw std::invalid_argument("adaptive pooling: need 1 <= m <= N, got m=" + std::to_string(m) +
                                ", N=" + std::to_string(n));
  }
  std::vector<PoolWindow> windows(m);
  for (std::size_t i = 0; i < m; ++i) {
    windows[i].begin = (i * n) / m;
    windows[i].end = ((i + 1) * n + m - 1) / m;
  }
  return windows;
}

Mat adaptive_avg_pool(const Mat& q, std::size_t m) {
  const auto windows = pool_windows(q.cols(), m);
  Mat out(q.rows(), m);
  for (std::size_t r = 0; r < q.rows(); ++r) {
    const double* src = q.row_ptr(r);
    double* dst = out.row_ptr(r);
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = windows[i].begin; j < windows[i].end; ++j) acc += src[j];
      dst[i] = acc / static_cast<double>(windows[i].end - windows[i].begin);
    }
  }
  return out;
}

Mat adaptive_avg_pool_adjoint(const Mat& pooled_grad, std::size_t n) {
  const std::size_t m = pooled_grad.cols();
  const auto windows = pool_windows(n, m);
  Mat out(pooled_grad.rows(), n);
  for (std::size_t r = 0; r < pooled_grad.rows(); ++r) {
    const double* src = pooled_grad.row_ptr(r);
    double* dst = out.row_ptr(r);
    for (std::size_t i = 0; i < m; ++i) {
      const double share = src[i] / static_cast<double>(windows[i].end - windows[i].begin);
      for (std::size_t j = windows[i].begin; j < windows[i].end; ++j) dst[j] += share;
    }
  }
  return out;
}

}  // namespace mita
