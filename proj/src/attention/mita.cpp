// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "mita/mita.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mita/reference.h"

namespace mita {

namespace {

double inv_sqrt_dim(const Mat& q) { return 1.0 / std::sqrt(static_cast<double>(q.rows())); }

Mat col_block(const Mat& m, std::size_t begin, std::size_t count) {
  Mat out(m.rows(), count);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    std::copy_n(m.row_ptr(i) + begin, count, out.row_ptr(i));
  }
  return out;
}

// Landmark queries and S^kv only; the route-only variant never needs the
// landmark values.
LandmarkState landmark_scores(const Mat& q, const Mat& k, std::size_t m) {
  LandmarkState state;
  state.q_landmark = adaptive_avg_pool(q, m);
  state.scores = matmul_tn(k, state.q_landmark);
  state.scores *= inv_sqrt_dim(q);
  return state;
}

}  // namespace

void MitaConfig::validate() const {
  if (m == 0) throw std::invalid_argument("MitaConfig: m must be positive");
  if (k == 0) throw std::invalid_argument("MitaConfig: k must be positive");
  if (s != 1) {
    throw std::invalid_argument("MitaConfig: only s = 1 routed expert per query is supported");
  }
  if (!shared_expert && !routed_experts) {
    throw std::invalid_argument("MitaConfig: at least one of shared/routed experts must be on");
  }
}

void MitaConfig::validate_for(std::size_t n) const {
  validate();
  if (m > n) {
    throw std::invalid_argument("MitaConfig: m=" + std::to_string(m) + " exceeds sequence length " +
                                std::to_string(n));
  }
}

std::size_t MitaConfig::attended_per_query(std::size_t n) const {
  return (shared_expert ? m : 0) + (routed_experts ? std::min(k, n) * s : 0);
}

LandmarkState build_landmarks(const Mat& q, const Mat& k, const Mat& v, std::size_t m) {
  check_attention_operands(q, k, v, "build_landmarks");
  LandmarkState state = landmark_scores(q, k, m);
  // Column i of softmax(S^kv) is landmark i's attention over all N keys.
  state.v_landmark = matmul(v, softmax_cols(state.scores));
  return state;
}

ExpertSet build_experts(const LandmarkState& state, const Mat& k, const Mat& v, std::size_t width) {
  if (width == 0) throw std::invalid_argument("build_experts: k must be positive");
  if (state.scores.rows() != k.cols() || k.cols() != v.cols()) {
    throw std::invalid_argument("build_experts: score table " + shape_str(state.scores) +
                                " does not match keys " + shape_str(k));
  }
  const std::size_t m = state.scores.cols();
  const std::size_t n = state.scores.rows();
  const std::size_t w = std::min(width, n);
  ExpertSet experts;
  experts.indices.reserve(m);
  IndexList flat;
  flat.reserve(m * w);
  std::vector<double> column(n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < n; ++t) column[t] = state.scores(t, i);
    experts.indices.push_back(top_k_indices(column, w));
    flat.insert(flat.end(), experts.indices.back().begin(), experts.indices.back().end());
  }
  experts.k_gathered = gather_cols(k, flat);
  experts.v_gathered = gather_cols(v, flat);
  return experts;
}

RoutingTable route_queries(const Mat& q, const Mat& q_landmark) {
  if (q.rows() != q_landmark.rows()) {
    throw std::invalid_argument("route_queries: queries " + shape_str(q) + " and landmarks " +
                                shape_str(q_landmark) + " disagree on d");
  }
  const std::size_t n = q.cols();
  const std::size_t m = q_landmark.cols();
  const Mat logits = matmul_tn(q_landmark, q);  // m x N
  RoutingTable table;
  table.assignment.assign(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < m; ++i) {
      if (logits(i, j) > logits(best, j)) best = i;
    }
    table.assignment[j] = best;
  }
  table.sorted_query_order.resize(n);
  std::iota(table.sorted_query_order.begin(), table.sorted_query_order.end(), std::size_t{0});
  std::stable_sort(table.sorted_query_order.begin(), table.sorted_query_order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return table.assignment[a] < table.assignment[b];
                   });
  std::vector<std::size_t> counts(m, 0);
  for (std::size_t e : table.assignment) ++counts[e];
  table.group_boundaries.resize(m);
  std::partial_sum(counts.begin(), counts.end(), table.group_boundaries.begin());
  return table;
}

PartialAttention attend_subset(const Mat& q_block, const Mat& k_sub, const Mat& v_sub) {
  if (k_sub.empty() || v_sub.empty()) {
    throw std::invalid_argument("attend_subset: empty key set");
  }
  check_attention_operands(q_block, k_sub, v_sub, "attend_subset");
  const std::size_t t = k_sub.cols();
  const std::size_t n = q_block.cols();
  Mat logits = matmul_tn(k_sub, q_block);  // t x n
  logits *= inv_sqrt_dim(q_block);

  PartialAttention part;
  part.row_max.assign(n, -std::numeric_limits<double>::infinity());
  part.denom.assign(n, 0.0);
  for (std::size_t r = 0; r < t; ++r) {
    const double* row = logits.row_ptr(r);
    for (std::size_t j = 0; j < n; ++j) part.row_max[j] = std::max(part.row_max[j], row[j]);
  }
  for (std::size_t r = 0; r < t; ++r) {
    double* row = logits.row_ptr(r);
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - part.row_max[j]);
      part.denom[j] += row[j];
    }
  }
  for (std::size_t r = 0; r < t; ++r) {
    double* row = logits.row_ptr(r);
    for (std::size_t j = 0; j < n; ++j) row[j] /= part.denom[j];
  }
  part.out = matmul(v_sub, logits);
  return part;
}

PartialAttention merge_partials(std::span<const PartialAttention> parts) {
  if (parts.empty()) throw std::invalid_argument("combine_partials: no partial results");
  const std::size_t n = parts.front().queries();
  const std::size_t d = parts.front().out.rows();
  for (const auto& p : parts) {
    if (p.queries() != n || p.denom.size() != n || p.out.cols() != n || p.out.rows() != d) {
      throw std::invalid_argument("combine_partials: partials cover different query sets");
    }
  }
  if (parts.size() == 1) return parts.front();

  PartialAttention merged;
  merged.out = Mat(d, n);
  merged.row_max.assign(n, -std::numeric_limits<double>::infinity());
  merged.denom.assign(n, 0.0);
  for (const auto& p : parts) {
    for (std::size_t j = 0; j < n; ++j) merged.row_max[j] = std::max(merged.row_max[j], p.row_max[j]);
  }
  std::vector<double> weight(n);
  for (const auto& p : parts) {
    for (std::size_t j = 0; j < n; ++j) {
      weight[j] = std::exp(p.row_max[j] - merged.row_max[j]) * p.denom[j];
      merged.denom[j] += weight[j];
    }
    for (std::size_t i = 0; i < d; ++i) {
      const double* src = p.out.row_ptr(i);
      double* dst = merged.out.row_ptr(i);
      for (std::size_t j = 0; j < n; ++j) dst[j] += weight[j] * src[j];
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    double* dst = merged.out.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) dst[j] /= merged.denom[j];
  }
  return merged;
}

Mat combine_partials(std::span<const PartialAttention> parts) {
  return merge_partials(parts).out;
}

MitaTrace mita_forward(const Mat& q, const Mat& k, const Mat& v, const MitaConfig& cfg) {
  check_attention_operands(q, k, v, "mita_attention");
  cfg.validate_for(std::min(q.cols(), k.cols()));
  const std::size_t n = q.cols();
  const std::size_t d = q.rows();

  MitaTrace trace;
  trace.landmarks = landmark_scores(q, k, cfg.m);
  std::vector<PartialAttention> parts;

  if (cfg.shared_expert) {
    trace.landmarks.v_landmark = matmul(v, softmax_cols(trace.landmarks.scores));
    parts.push_back(attend_subset(q, trace.landmarks.q_landmark, trace.landmarks.v_landmark));
  }

  if (cfg.routed_experts) {
    trace.experts = build_experts(trace.landmarks, k, v, cfg.k);
    trace.routing = route_queries(q, trace.landmarks.q_landmark);
    const std::size_t width = trace.experts.width();

    PartialAttention routed;
    routed.out = Mat(d, n);
    routed.row_max.assign(n, 0.0);
    routed.denom.assign(n, 0.0);
    // Queries are processed grouped by expert and scattered back to their
    // original columns.
    for (std::size_t e = 0; e < cfg.m; ++e) {
      const std::size_t begin = trace.routing.group_begin(e);
      const std::size_t end = trace.routing.group_end(e);
      if (begin == end) continue;
      const std::span<const std::size_t> members(trace.routing.sorted_query_order.data() + begin,
                                                 end - begin);
      const Mat q_group = gather_cols(q, members);
      const PartialAttention part =
          attend_subset(q_group, col_block(trace.experts.k_gathered, trace.experts.offset(e), width),
                        col_block(trace.experts.v_gathered, trace.experts.offset(e), width));
      for (std::size_t g = 0; g < members.size(); ++g) {
        const std::size_t j = members[g];
        for (std::size_t i = 0; i < d; ++i) routed.out(i, j) = part.out(i, g);
        routed.row_max[j] = part.row_max[g];
        routed.denom[j] = part.denom[g];
      }
    }
    parts.push_back(std::move(routed));
  }

  trace.out = combine_partials(parts);
  trace.attended_count.assign(n, 0);
  for (std::size_t j = 0; j < n; ++j) {
    if (cfg.shared_expert) trace.attended_count[j] += trace.landmarks.q_landmark.cols();
    if (cfg.routed_experts) trace.attended_count[j] += trace.experts.width() * cfg.s;
  }
  return trace;
}

Mat mita_attention(const Mat& q, const Mat& k, const Mat& v, const MitaConfig& cfg) {
  return mita_forward(q, k, v, cfg).out;
}

Mat compression_only_attention(const Mat& q, const Mat& k, const Mat& v, std::size_t m) {
  return mita_attention(q, k, v, MitaConfig::compression_only(m));
}

Mat route_only_attention(const Mat& q, const Mat& k, const Mat& v, std::size_t m,
                         std::size_t k_width) {
  return mita_attention(q, k, v, MitaConfig::route_only(m, k_width));
}

Mechanism parse_mechanism(std::string_view name) {
  if (name == "full") return Mechanism::kFull;
  if (name == "mita") return Mechanism::kMita;
  if (name == "compression-only" || name == "compress") return Mechanism::kCompressionOnly;
  if (name == "route-only" || name == "route") return Mechanism::kRouteOnly;
  throw std::invalid_argument("unknown attention mechanism '" + std::string(name) +
                              "' (expected full, mita, compression-only, route-only)");
}

std::string_view mechanism_name(Mechanism mech) {
  switch (mech) {
    case Mechanism::kFull: return "full";
    case Mechanism::kMita: return "mita";
    case Mechanism::kCompressionOnly: return "compression-only";
    case Mechanism::kRouteOnly: return "route-only";
  }
  throw std::invalid_argument("unknown attention mechanism");
}

MitaConfig config_for(Mechanism mech, std::size_t m, std::size_t k) {
  switch (mech) {
    case Mechanism::kFull:
    case Mechanism::kMita: return MitaConfig::full(m, k);
    case Mechanism::kCompressionOnly: return MitaConfig::compression_only(m);
    case Mechanism::kRouteOnly: return MitaConfig::route_only(m, k);
  }
  throw std::invalid_argument("unknown attention mechanism");
}

Mat attention(Mechanism mech, const Mat& q, const Mat& k, const Mat& v, const MitaConfig& cfg) {
  if (mech == Mechanism::kFull) return full_attention(q, k, v);
  if (mech == Mechanism::kMita) return mita_attention(q, k, v, cfg);
  return mita_attention(q, k, v, config_for(mech, cfg.m, cfg.k));
}

Mat mita_concat_attention(const Mat& q, const Mat& k, const Mat& v, const MitaConfig& cfg) {
  check_attention_operands(q, k, v, "mita_concat_attention");
  cfg.validate_for(std::min(q.cols(), k.cols()));
  const std::size_t d = q.rows();
  const LandmarkState landmarks = build_landmarks(q, k, v, cfg.m);
  ExpertSet experts;
  RoutingTable routing;
  if (cfg.routed_experts) {
    experts = build_experts(landmarks, k, v, cfg.k);
    routing = route_queries(q, landmarks.q_landmark);
  }
  Mat out(d, q.cols());
  for (std::size_t j = 0; j < q.cols(); ++j) {
    IndexList routed;
    if (cfg.routed_experts) routed = experts.indices[routing.assignment[j]];
    const std::size_t shared = cfg.shared_expert ? cfg.m : 0;
    Mat k_star(d, shared + routed.size());
    Mat v_star(d, shared + routed.size());
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t c = 0; c < shared; ++c) {
        k_star(i, c) = landmarks.q_landmark(i, c);
        v_star(i, c) = landmarks.v_landmark(i, c);
      }
      for (std::size_t c = 0; c < routed.size(); ++c) {
        k_star(i, shared + c) = k(i, routed[c]);
        v_star(i, shared + c) = v(i, routed[c]);
      }
    }
    Mat qj(d, 1);
    for (std::size_t i = 0; i < d; ++i) qj(i, 0) = q(i, j);
    const Mat oj = full_attention(qj, k_star, v_star);
    for (std::size_t i = 0; i < d; ++i) out(i, j) = oj(i, 0);
  }
  return out;
}

std::uint64_t flop_count(Mechanism mech, std::size_t n, std::size_t d, const MitaConfig& cfg) {
  if (n == 0) throw std::invalid_argument("flop_count: N must be positive");
  if (d == 0) throw std::invalid_argument("flop_count: d must be positive");
  const std::uint64_t nn = n;
  const std::uint64_t dd = d;
  if (mech == Mechanism::kFull) return 4 * nn * nn * dd;

  const MitaConfig c = mech == Mechanism::kMita ? cfg : config_for(mech, cfg.m, cfg.k);
  c.validate_for(n);
  const std::uint64_t m = c.m;
  const std::uint64_t kw = std::min(c.k, n);
  std::uint64_t per_token = 1 + m;  // pooling + S^kv
  if (c.shared_expert) per_token += m + 2 * m;  // landmark values + shared attention
  if (c.routed_experts) per_token += m + 2 * kw * c.s;  // routing logits + routed attention
  return 2 * nn * dd * per_token;
}

}  // namespace mita
