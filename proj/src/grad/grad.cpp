// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "mita/grad.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "mita/ops.h"
#include "mita/reference.h"
#include "mita/rng.h"

namespace mita {

namespace {

// Selections closer than this to flipping under a finite-difference step are
// redrawn by grad_check.
constexpr double kFdSafeMargin = 1e-3;

void require_upstream(const Mat& upstream, const Mat& q, const char* where) {
  if (upstream.rows() != q.rows() || upstream.cols() != q.cols()) {
    throw std::invalid_argument(std::string(where) + ": upstream " + shape_str(upstream) +
                                " does not match output " + shape_str(q));
  }
}

// Backward of column-wise softmax: dS = A .* (dA - 1 * colsum(A .* dA)).
Mat softmax_cols_backward(const Mat& a, const Mat& da) {
  const std::size_t p = a.rows();
  const std::size_t n = a.cols();
  std::vector<double> dot(n, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < n; ++j) dot[j] += a(i, j) * da(i, j);
  }
  Mat ds(p, n);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < n; ++j) ds(i, j) = a(i, j) * (da(i, j) - dot[j]);
  }
  return ds;
}

Mat hconcat(const Mat& a, const Mat& b) {
  Mat out(a.rows(), a.cols() + b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    std::copy_n(a.row_ptr(i), a.cols(), out.row_ptr(i));
    std::copy_n(b.row_ptr(i), b.cols(), out.row_ptr(i) + a.cols());
  }
  return out;
}

// Extended-precision forward pass used as the finite-difference oracle. It
// follows the direct definition: each query attends, through one softmax, to
// the shared landmarks and the keys of its routed expert.
using Real = long double;

struct Wide {
  std::size_t rows = 0, cols = 0;
  std::vector<Real> a;
  Real& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  Real operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
};

Wide widen(const Mat& m) {
  Wide w{m.rows(), m.cols(), std::vector<Real>(m.data().begin(), m.data().end())};
  return w;
}

// out(:, j) = sum_c softmax_c(keys(:, c) . q(:, j) * scale) values(:, c)
void attend_one(const Wide& q, std::size_t j, const std::vector<const Real*>& keys,
                const std::vector<const Real*>& values, std::size_t stride, Wide& out) {
  const std::size_t d = q.rows;
  const Real scale = 1 / std::sqrt(static_cast<Real>(d));
  std::vector<Real> logit(keys.size());
  Real top = -std::numeric_limits<Real>::infinity();
  for (std::size_t c = 0; c < keys.size(); ++c) {
    Real acc = 0;
    for (std::size_t i = 0; i < d; ++i) acc += keys[c][i * stride] * q(i, j);
    logit[c] = acc * scale;
    top = std::max(top, logit[c]);
  }
  Real total = 0;
  for (Real& l : logit) total += (l = std::exp(l - top));
  for (std::size_t i = 0; i < d; ++i) {
    Real acc = 0;
    for (std::size_t c = 0; c < keys.size(); ++c) acc += logit[c] * values[c][i * stride];
    out(i, j) = acc / total;
  }
}

Wide wide_attention(Mechanism mech, const Wide& q, const Wide& k, const Wide& v, const MitaConfig& cfg) {
  const std::size_t d = q.rows, n = q.cols;
  Wide out{d, n, std::vector<Real>(d * n)};
  std::vector<const Real*> keys, values;
  if (mech == Mechanism::kFull) {
    for (std::size_t c = 0; c < n; ++c) {
      keys.push_back(&k.a[c]);
      values.push_back(&v.a[c]);
    }
    for (std::size_t j = 0; j < n; ++j) attend_one(q, j, keys, values, n, out);
    return out;
  }
  const std::size_t m = cfg.m;
  const Real scale = 1 / std::sqrt(static_cast<Real>(d));
  Wide lm{d, m, std::vector<Real>(d * m, 0)};
  const auto windows = pool_windows(n, m);
  for (std::size_t e = 0; e < m; ++e) {
    for (std::size_t i = 0; i < d; ++i) {
      Real acc = 0;
      for (std::size_t j = windows[e].begin; j < windows[e].end; ++j) acc += q(i, j);
      lm(i, e) = acc / static_cast<Real>(windows[e].end - windows[e].begin);
    }
  }
  Wide scores{n, m, std::vector<Real>(n * m)};
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t e = 0; e < m; ++e) {
      Real acc = 0;
      for (std::size_t i = 0; i < d; ++i) acc += k(i, j) * lm(i, e);
      scores(j, e) = acc * scale;
    }
  }
  Wide v_lm{d, m, std::vector<Real>(d * m, 0)};
  if (cfg.shared_expert) {
    for (std::size_t e = 0; e < m; ++e) {
      Real top = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < n; ++j) top = std::max(top, scores(j, e));
      std::vector<Real> w(n);
      Real total = 0;
      for (std::size_t j = 0; j < n; ++j) total += (w[j] = std::exp(scores(j, e) - top));
      for (std::size_t i = 0; i < d; ++i) {
        Real acc = 0;
        for (std::size_t j = 0; j < n; ++j) acc += w[j] * v(i, j);
        v_lm(i, e) = acc / total;
      }
    }
  }
  std::vector<IndexList> picked(m);
  if (cfg.routed_experts) {
    const std::size_t width = std::min(cfg.k, n);
    for (std::size_t e = 0; e < m; ++e) {
      IndexList order(n);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores(a, e) > scores(b, e); });
      picked[e].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(width));
    }
  }
  for (std::size_t j = 0; j < n; ++j) {
    IndexList routed;
    if (cfg.routed_experts) {
      std::size_t best = 0;
      Real best_logit = -std::numeric_limits<Real>::infinity();
      for (std::size_t e = 0; e < m; ++e) {
        Real acc = 0;
        for (std::size_t i = 0; i < d; ++i) acc += lm(i, e) * q(i, j);
        if (acc > best_logit) {
          best_logit = acc;
          best = e;
        }
      }
      routed = picked[best];
    }
    const std::size_t shared = cfg.shared_expert ? m : 0;
    const std::size_t total = shared + routed.size();
    Wide kk{d, total, std::vector<Real>(d * total)};
    Wide vv{d, total, std::vector<Real>(d * total)};
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t c = 0; c < shared; ++c) {
        kk(i, c) = lm(i, c);
        vv(i, c) = v_lm(i, c);
      }
      for (std::size_t c = 0; c < routed.size(); ++c) {
        kk(i, shared + c) = k(i, routed[c]);
        vv(i, shared + c) = v(i, routed[c]);
      }
    }
    keys.clear();
    values.clear();
    for (std::size_t c = 0; c < total; ++c) {
      keys.push_back(&kk.a[c]);
      values.push_back(&vv.a[c]);
    }
    attend_one(q, j, keys, values, total, out);
  }
  return out;
}

}  // namespace

AttentionGrads full_attention_vjp(const Mat& q, const Mat& k, const Mat& v, const Mat& upstream) {
  check_attention_operands(q, k, v, "full_attention_vjp");
  require_upstream(upstream, q, "full_attention_vjp");
  const double c = 1.0 / std::sqrt(static_cast<double>(q.rows()));
  Mat a = matmul_tn(k, q);
  a *= c;
  softmax_cols_inplace(a);

  AttentionGrads g;
  g.dv = matmul_nt(upstream, a);
  const Mat ds = softmax_cols_backward(a, matmul_tn(v, upstream));
  g.dq = matmul(k, ds) * c;
  g.dk = matmul_nt(q, ds) * c;
  return g;
}

double selection_margin(const Mat& q, const Mat& k, const MitaConfig& cfg) {
  double margin = std::numeric_limits<double>::infinity();
  if (!cfg.routed_experts) return margin;
  const Mat q_landmark = adaptive_avg_pool(q, cfg.m);
  Mat scores = matmul_tn(k, q_landmark);
  scores *= 1.0 / std::sqrt(static_cast<double>(q.rows()));
  const std::size_t n = scores.rows();
  const std::size_t w = std::min(cfg.k, n);
  if (w < n) {
    std::vector<double> column(n);
    for (std::size_t i = 0; i < scores.cols(); ++i) {
      for (std::size_t t = 0; t < n; ++t) column[t] = scores(t, i);
      std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(w - 1),
                       column.end(), std::greater<>());
      const double kth = column[w - 1];
      const double next = *std::max_element(column.begin() + static_cast<std::ptrdiff_t>(w),
                                            column.end());
      margin = std::min(margin, kth - next);
    }
  }
  if (cfg.m > 1) {
    const Mat logits = matmul_tn(q_landmark, q);
    for (std::size_t j = 0; j < logits.cols(); ++j) {
      double best = -std::numeric_limits<double>::infinity();
      double second = best;
      for (std::size_t i = 0; i < logits.rows(); ++i) {
        const double x = logits(i, j);
        if (x > best) {
          second = best;
          best = x;
        } else if (x > second) {
          second = x;
        }
      }
      margin = std::min(margin, best - second);
    }
  }
  return margin;
}

AttentionGrads mita_vjp(const Mat& q, const Mat& k, const Mat& v, const MitaConfig& cfg,
                        const Mat& upstream, const VjpOptions& opts) {
  check_attention_operands(q, k, v, "mita_vjp");
  require_upstream(upstream, q, "mita_vjp");
  cfg.validate_for(std::min(q.cols(), k.cols()));
  if (opts.check_ties) {
    const double margin = selection_margin(q, k, cfg);
    if (margin <= opts.tie_tol) {
      throw NondifferentiablePoint("mita_vjp: selection scores tied within " +
                                   std::to_string(opts.tie_tol) + " (margin " +
                                   std::to_string(margin) + ")");
    }
  }

  const std::size_t d = q.rows();
  const std::size_t n = q.cols();
  const std::size_t m = cfg.m;
  const double c = 1.0 / std::sqrt(static_cast<double>(d));

  // Forward recomputation.
  const Mat q_landmark = adaptive_avg_pool(q, m);
  Mat scores = matmul_tn(k, q_landmark);
  scores *= c;
  Mat weights;
  Mat v_landmark;
  if (cfg.shared_expert) {
    weights = softmax_cols(scores);
    v_landmark = matmul(v, weights);
  }

  AttentionGrads g{Mat(d, n), Mat(d, k.cols()), Mat(d, v.cols())};
  Mat d_q_landmark(d, m);
  Mat d_v_landmark(d, m);
  const std::size_t shared = cfg.shared_expert ? m : 0;

  // One query group attending to [landmarks | routed columns]; gradients are
  // scattered back to query, landmark and key/value positions.
  auto backward_group = [&](std::span<const std::size_t> members, const IndexList* routed) {
    const Mat q_group = gather_cols(q, members);
    const Mat up_group = gather_cols(upstream, members);
    Mat keys, values;
    if (routed && shared > 0) {
      keys = hconcat(q_landmark, gather_cols(k, *routed));
      values = hconcat(v_landmark, gather_cols(v, *routed));
    } else if (routed) {
      keys = gather_cols(k, *routed);
      values = gather_cols(v, *routed);
    } else {
      keys = q_landmark;
      values = v_landmark;
    }
    Mat probs = matmul_tn(keys, q_group);
    probs *= c;
    softmax_cols_inplace(probs);
    Mat dz = softmax_cols_backward(probs, matmul_tn(values, up_group));
    dz *= c;
    const Mat dq_group = matmul(keys, dz);
    const Mat d_keys = matmul_nt(q_group, dz);
    const Mat d_values = matmul_nt(up_group, probs);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t t = 0; t < members.size(); ++t) g.dq(i, members[t]) += dq_group(i, t);
      for (std::size_t t = 0; t < shared; ++t) {
        d_q_landmark(i, t) += d_keys(i, t);
        d_v_landmark(i, t) += d_values(i, t);
      }
      if (!routed) continue;
      for (std::size_t t = 0; t < routed->size(); ++t) {
        g.dk(i, (*routed)[t]) += d_keys(i, shared + t);
        g.dv(i, (*routed)[t]) += d_values(i, shared + t);
      }
    }
  };

  if (cfg.routed_experts) {
    LandmarkState selection_state;
    selection_state.scores = scores;
    const ExpertSet experts = build_experts(selection_state, k, v, cfg.k);
    const RoutingTable routing = route_queries(q, q_landmark);
    for (std::size_t e = 0; e < m; ++e) {
      const std::size_t begin = routing.group_begin(e);
      const std::size_t end = routing.group_end(e);
      if (begin == end) continue;
      backward_group({routing.sorted_query_order.data() + begin, end - begin}, &experts.indices[e]);
    }
  } else {
    IndexList all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    backward_group(all, nullptr);
  }

  if (cfg.shared_expert) {
    // V~ = V softmax(S), S = c K^T Q~, Q~ = pool(Q).
    g.dv += matmul_nt(d_v_landmark, weights);
    const Mat ds = softmax_cols_backward(weights, matmul_tn(v, d_v_landmark));
    g.dk += matmul_nt(q_landmark, ds) * c;
    d_q_landmark += matmul(k, ds) * c;
    g.dq += adaptive_avg_pool_adjoint(d_q_landmark, n);
  }
  return g;
}

AttentionGrads attention_vjp(Mechanism mech, const Mat& q, const Mat& k, const Mat& v,
                             const MitaConfig& cfg, const Mat& upstream, const VjpOptions& opts) {
  if (mech == Mechanism::kFull) return full_attention_vjp(q, k, v, upstream);
  const MitaConfig c = mech == Mechanism::kMita ? cfg : config_for(mech, cfg.m, cfg.k);
  return mita_vjp(q, k, v, c, upstream, opts);
}

Mat finite_diff_grad(const ScalarFn& f, const Mat& x, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  Mat grad(x.rows(), x.cols());
  Mat probe = x;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      const double saved = probe(i, j);
      probe(i, j) = saved + eps;
      const double up = f(probe);
      probe(i, j) = saved - eps;
      const double down = f(probe);
      probe(i, j) = saved;
      grad(i, j) = (up - down) / (2.0 * eps);
    }
  }
  return grad;
}

double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

GradCheckReport grad_check_inputs(Mechanism mech, const Mat& q, const Mat& k, const Mat& v,
                                  const MitaConfig& cfg, const Mat& upstream, double tol,
                                  double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");
  GradCheckReport report;
  const MitaConfig c = mech == Mechanism::kMita ? cfg : config_for(mech, cfg.m, cfg.k);
  if (mech != Mechanism::kFull && selection_margin(q, k, c) <= VjpOptions{}.tie_tol) {
    report.tie_detected = true;
    report.pass = true;
    return report;
  }
  const AttentionGrads analytic = attention_vjp(mech, q, k, v, c, upstream);
  const Wide wq = widen(q), wk = widen(k), wv = widen(v), wu = widen(upstream);
  // Central differences of <upstream, attention> in extended precision.
  auto central = [&](int which, const Mat& x) {
    Mat g(x.rows(), x.cols());
    Wide probe = widen(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const Real saved = probe.a[i];
      const auto at = [&](Real value) {
        probe.a[i] = value;
        const Wide& qq = which == 0 ? probe : wq;
        const Wide& kk = which == 1 ? probe : wk;
        const Wide& vv = which == 2 ? probe : wv;
        const Wide out = wide_attention(mech, qq, kk, vv, c);
        Real acc = 0;
        for (std::size_t t = 0; t < out.a.size(); ++t) acc += out.a[t] * wu.a[t];
        return acc;
      };
      const Real up = at(static_cast<Real>(x.data()[i] + eps));
      const Real down = at(static_cast<Real>(x.data()[i] - eps));
      probe.a[i] = saved;
      g.data()[i] = static_cast<double>((up - down) / (2 * static_cast<Real>(eps)));
    }
    return g;
  };
  const Mat fd_q = central(0, q);
  const Mat fd_k = central(1, k);
  const Mat fd_v = central(2, v);
  auto worst = [](const Mat& a, const Mat& b) {
    double w = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, relative_error(a.data()[i], b.data()[i]));
    return w;
  };
  report.max_rel_err =
      std::max({worst(analytic.dq, fd_q), worst(analytic.dk, fd_k), worst(analytic.dv, fd_v)});
  report.pass = report.max_rel_err < tol;
  return report;
}

GradCheckReport grad_check(Mechanism mech, const GradCheckDims& dims, const MitaConfig& cfg,
                           std::uint64_t seed, double tol, double eps) {
  const MitaConfig c = mech == Mechanism::kMita ? cfg : config_for(mech, cfg.m, cfg.k);
  // Draw until the selections sit comfortably away from any tie, so that no
  // finite-difference step can flip a top-k set or a routing decision.
  for (std::uint64_t attempt = 0; attempt < 64; ++attempt) {
    Rng rng = Rng::derive(seed, attempt);
    const Mat q = random_normal(dims.d, dims.n, rng);
    const Mat k = random_normal(dims.d, dims.n, rng);
    const Mat v = random_normal(dims.d, dims.n, rng);
    const Mat upstream = random_normal(dims.d, dims.n, rng);
    if (mech != Mechanism::kFull && selection_margin(q, k, c) < kFdSafeMargin) continue;
    return grad_check_inputs(mech, q, k, v, c, upstream, tol, eps);
  }
  GradCheckReport report;
  report.tie_detected = true;
  report.pass = true;
  return report;
}

}  // namespace mita
