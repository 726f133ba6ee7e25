// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

#include "mita/mat.h"
#include "mita/mita.h"

namespace mita {

/// Cotangents of an attention call with respect to its three operands.
struct AttentionGrads {
  Mat dq;
  Mat dk;
  Mat dv;
};

/// Raised by mita_vjp when a top-k boundary or routing argmax is tied within
/// tolerance, i.e. the forward pass sits on a point where it is not
/// differentiable.
class NondifferentiablePoint : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exact VJP of full_attention for an upstream cotangent on its output.
AttentionGrads full_attention_vjp(const Mat& q, const Mat& k, const Mat& v, const Mat& upstream);

struct VjpOptions {
  bool check_ties = true;
  double tie_tol = 1e-9;
};

/// VJP of mita_attention with expert index sets and routing held fixed.
///
/// Gradients reach Q through both the direct query path and the landmark
/// pooling path, and reach K, V through S^kv, the landmark values and the
/// gathered expert columns (scatter-added back to their token positions).
AttentionGrads mita_vjp(const Mat& q, const Mat& k, const Mat& v, const MitaConfig& cfg,
                        const Mat& upstream, const VjpOptions& opts = {});

/// VJP of attention(mech, ...) dispatching to the two routines above.
AttentionGrads attention_vjp(Mechanism mech, const Mat& q, const Mat& k, const Mat& v,
                             const MitaConfig& cfg, const Mat& upstream,
                             const VjpOptions& opts = {});

/// Smallest gap between a selected and an unselected score (top-k boundary)
/// or between the best and runner-up routing logit. Infinity when nothing is
/// being selected (k >= N and m == 1).
double selection_margin(const Mat& q, const Mat& k, const MitaConfig& cfg);

using ScalarFn = std::function<double(const Mat&)>;

/// Central differences (f(X + eps E_ij) - f(X - eps E_ij)) / (2 eps).
Mat finite_diff_grad(const ScalarFn& f, const Mat& x, double eps = 1e-5);

struct GradCheckDims {
  std::size_t d = 4;
  std::size_t n = 16;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  bool tie_detected = false;
};

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double a, double b);

/// Draws Q, K, V and an upstream weighting C from `seed`, then compares the
/// analytic gradient of <C, attention(Q, K, V)> to central differences on
/// every coordinate. A tie in the selection scores sets tie_detected and
/// leaves pass vacuously true.
GradCheckReport grad_check(Mechanism mech, const GradCheckDims& dims, const MitaConfig& cfg,
                           std::uint64_t seed, double tol, double eps = 1e-5);

/// Same comparison on caller-supplied operands.
GradCheckReport grad_check_inputs(Mechanism mech, const Mat& q, const Mat& k, const Mat& v,
                                  const MitaConfig& cfg, const Mat& upstream, double tol,
                                  double eps = 1e-5);

}  // namespace mita
