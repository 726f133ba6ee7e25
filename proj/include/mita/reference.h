// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

#include "mita/mat.h"

namespace mita {

/// Owning bundle of one head's attention operands: Q is d x N_q, K and V are
/// d x N. Scores are scaled by 1/sqrt(d).
struct AttentionInput {
  Mat q;
  Mat k;
  Mat v;

  std::size_t dim() const { return q.rows(); }
  /// Throws std::invalid_argument on shape disagreement or non-finite entries.
  void validate() const;
};

/// Shape and finiteness check shared by every attention entry point.
void check_attention_operands(const Mat& q, const Mat& k, const Mat& v, const char* where);

/// V softmax(K^T q / sqrt(d)) for every query column.
Mat full_attention(const Mat& q, const Mat& k, const Mat& v);
inline Mat full_attention(const AttentionInput& in) { return full_attention(in.q, in.k, in.v); }

/// The same map written as an N-width two-layer MLP with exp activation:
/// first-layer weights K / sqrt(d), second-layer weights V scaled by the
/// inverse partition sum. Numerator and denominator share one max shift.
Mat fast_weight_mlp(const Mat& q, const Mat& k, const Mat& v);
inline Mat fast_weight_mlp(const AttentionInput& in) { return fast_weight_mlp(in.q, in.k, in.v); }

using AttentionFn = std::function<Mat(const Mat& q, const Mat& k, const Mat& v)>;

/// Splits the D rows into `heads` contiguous blocks, applies `mech` per block
/// and stacks the results. No output projection.
Mat multi_head(const Mat& q, const Mat& k, const Mat& v, std::size_t heads, const AttentionFn& mech);

}  // namespace mita
