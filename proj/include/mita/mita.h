// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mita/mat.h"
#include "mita/ops.h"

namespace mita {

/// Hyperparameters of one MiTA attention call.
///
/// Every query attends to the shared expert (m landmark key/value pairs) and
/// to s routed experts of width k. Only s = 1 is supported. Switching one of
/// the two branches off gives the compression-only and route-only variants.
struct MitaConfig {
  std::size_t m = 1;  ///< landmark / expert count
  std::size_t k = 1;  ///< expert width, clamped to N at use
  std::size_t s = 1;  ///< routed experts per query
  bool shared_expert = true;
  bool routed_experts = true;

  static MitaConfig full(std::size_t m, std::size_t k) { return {m, k, 1, true, true}; }
  static MitaConfig compression_only(std::size_t m) { return {m, 1, 1, true, false}; }
  static MitaConfig route_only(std::size_t m, std::size_t k) { return {m, k, 1, false, true}; }

  /// Throws std::invalid_argument when a type invariant is violated.
  void validate() const;
  /// Additionally checks m <= n.
  void validate_for(std::size_t n) const;
  /// Key-value positions each query attends to for sequence length n.
  std::size_t attended_per_query(std::size_t n) const;

  friend bool operator==(const MitaConfig&, const MitaConfig&) = default;
};

/// Landmark queries, their cross-attention readout of the values, and the
/// key-landmark score table shared by expert construction.
struct LandmarkState {
  Mat q_landmark;  ///< d x m
  Mat v_landmark;  ///< d x m
  Mat scores;      ///< N x m, K^T q_landmark / sqrt(d)
};

/// Top-k key/value positions per landmark, flattened expert-major.
struct ExpertSet {
  std::vector<IndexList> indices;  ///< m lists, each descending by score
  Mat k_gathered;                  ///< d x (m * width)
  Mat v_gathered;                  ///< d x (m * width)

  std::size_t count() const { return indices.size(); }
  std::size_t width() const { return indices.empty() ? 0 : indices.front().size(); }
  /// Flattened column range [begin, begin + width) of expert e.
  std::size_t offset(std::size_t e) const { return e * width(); }
};

/// Query-to-expert assignment plus the expert-sorted query layout.
struct RoutingTable {
  std::vector<std::size_t> assignment;          ///< length N, expert per query
  std::vector<std::size_t> sorted_query_order;  ///< stable sort by assignment
  std::vector<std::size_t> group_boundaries;    ///< length m, cumulative group sizes

  std::size_t group_begin(std::size_t e) const { return e == 0 ? 0 : group_boundaries[e - 1]; }
  std::size_t group_end(std::size_t e) const { return group_boundaries[e]; }
};

/// Attention over a key subset, carrying the online-softmax state needed to
/// merge it with attention over other subsets.
struct PartialAttention {
  Mat out;                      ///< d x n, normalized within this subset
  std::vector<double> row_max;  ///< per-query max logit
  std::vector<double> denom;    ///< per-query sum of exp(logit - row_max)

  std::size_t queries() const { return row_max.size(); }
};

LandmarkState build_landmarks(const Mat& q, const Mat& k, const Mat& v, std::size_t m);

ExpertSet build_experts(const LandmarkState& state, const Mat& k, const Mat& v, std::size_t width);

/// assignment[j] = argmax_i <q_landmark_i, q_j>, ties to the lowest i.
RoutingTable route_queries(const Mat& q, const Mat& q_landmark);

/// Scaled dot-product attention of q_block against (k_sub, v_sub).
PartialAttention attend_subset(const Mat& q_block, const Mat& k_sub, const Mat& v_sub);

/// Online-softmax merge of partials over the same queries.
PartialAttention merge_partials(std::span<const PartialAttention> parts);
Mat combine_partials(std::span<const PartialAttention> parts);

/// Everything a forward pass computed, for instrumentation and diagnostics.
struct MitaTrace {
  Mat out;                                  ///< d x N
  LandmarkState landmarks;
  ExpertSet experts;                        ///< empty when routed_experts is off
  RoutingTable routing;                     ///< empty when routed_experts is off
  std::vector<std::size_t> attended_count;  ///< per query
};

MitaTrace mita_forward(const Mat& q, const Mat& k, const Mat& v, const MitaConfig& cfg);
Mat mita_attention(const Mat& q, const Mat& k, const Mat& v, const MitaConfig& cfg);
/// Direct form used as an oracle: one softmax per query over the explicitly
/// concatenated K* = [Q~, K^(e)] and V* = [V~, V^(e)], no partial merging.
Mat mita_concat_attention(const Mat& q, const Mat& k, const Mat& v, const MitaConfig& cfg);
Mat compression_only_attention(const Mat& q, const Mat& k, const Mat& v, std::size_t m);
Mat route_only_attention(const Mat& q, const Mat& k, const Mat& v, std::size_t m, std::size_t k_width);

/// Attention mechanisms selectable by name.
enum class Mechanism : std::uint8_t { kFull, kMita, kCompressionOnly, kRouteOnly };

/// Accepts "full", "mita", "compression-only" (alias "compress") and
/// "route-only" (alias "route"); throws std::invalid_argument otherwise.
Mechanism parse_mechanism(std::string_view name);
std::string_view mechanism_name(Mechanism mech);

/// Config for `mech` built from (m, k). Unused for kFull.
MitaConfig config_for(Mechanism mech, std::size_t m, std::size_t k);

/// Attention of one head under `mech`; `cfg` ignored for kFull.
Mat attention(Mechanism mech, const Mat& q, const Mat& k, const Mat& v, const MitaConfig& cfg);

/// Analytic floating-point operation count of one single-head forward pass
/// over N tokens of dimension d, counting 2 flops per multiply-add. Softmax
/// exponentials, max/sum passes and top-k selection are not counted.
///
///   full:             4 N^2 d              (scores + weighted sum)
///   compression-only: 2 N d (1 + 4 m)      (pool, S^kv, landmark values,
///                                           shared-expert scores + sum)
///   route-only:       2 N d (1 + 2 m + 2 k)  (pool, S^kv, routing logits,
///                                             routed scores + sum)
///   mita:             2 N d (1 + 5 m + 2 k s)  (both of the above; the
///                                               routing logits are counted
///                                               separately from the shared-
///                                               expert scores)
///
/// k is clamped to N. N must be >= 1 and, for MiTA variants, m <= N.
std::uint64_t flop_count(Mechanism mech, std::size_t n, std::size_t d, const MitaConfig& cfg);

}  // namespace mita
