// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mita/mita.h"
#include "mita/train.h"

namespace mita {

/// Positions picked by at least one routed expert.
struct CoverageMask {
  std::vector<bool> mask;
  double ratio = 0.0;
};

CoverageMask coverage_mask(const ExpertSet& experts, std::size_t n);

/// |a ∩ b| / |a ∪ b| over token positions; 0 when both are empty.
double set_iou(const IndexList& a, const IndexList& b);

/// Mean over routed experts of the IoU between the expert's key/value
/// positions and the positions of the queries routed to it. Experts that
/// receive no queries contribute 0. The shared expert has no positional set
/// and is not included.
double overlap_miou(const ExpertSet& experts, const RoutingTable& routing, std::size_t n);

/// Per-layer means over heads and sequences.
struct LayerDiagnostics {
  std::vector<double> coverage;
  std::vector<double> miou;
};

/// Runs the model with a MiTA-family mechanism over `count` eval sequences
/// and aggregates coverage ratios and overlap mIoU per layer.
LayerDiagnostics model_diagnostics(const BlockParams& params, const TaskSpec& spec,
                                   const AttentionSpec& attn, std::uint64_t eval_seed,
                                   std::size_t count);

struct SweepCell {
  std::size_t m = 0;
  std::size_t k = 0;
  std::optional<double> accuracy;  // empty when skipped
  std::string skip_reason;
};

struct SweepResult {
  std::vector<SweepCell> cells;
  SweepCell baseline;
  std::optional<std::size_t> best;         // index into cells
  std::vector<std::size_t> cells_ge_99pct;  // indices into cells
};

/// Evaluates MiTA at every (m, k) of `grid` with a fixed eval seed. The
/// baseline is the model evaluated with its own mechanism `trained`.
SweepResult mk_sweep(const BlockParams& params, const TaskSpec& spec, const AttentionSpec& trained,
                     const std::vector<std::pair<std::size_t, std::size_t>>& grid,
                     std::uint64_t eval_seed, std::size_t count = 512);

/// Parses "16x16,32x32"; throws std::invalid_argument on malformed input.
std::vector<std::pair<std::size_t, std::size_t>> parse_grid(const std::string& text);

struct CrossMatrix {
  std::vector<std::string> train_labels;
  std::vector<std::string> infer_labels;
  std::vector<std::vector<std::optional<double>>> accuracy;  // [train][infer]
};

/// accuracy[i][j] = evaluate(models[i], infer[j]); incompatible cells are empty.
CrossMatrix cross_mech_matrix(const std::vector<ModelFile>& models,
                              const std::vector<AttentionSpec>& infer, const TaskSpec& spec,
                              std::uint64_t eval_seed, std::size_t count = 512);

/// Short label such as "full" or "mita(m=16,k=16)".
std::string attention_label(const AttentionSpec& attn);

struct BenchOptions {
  std::size_t layers = 3;
  std::size_t reps = 3;
  std::size_t warmup = 1;
  /// Upper bound on batch * N while auto-tuning the batch.
  std::size_t token_budget = 16384;
  std::uint64_t seed = 0;
};

struct BenchRecord {
  Mechanism mech = Mechanism::kFull;
  std::size_t n = 0;
  std::size_t dim = 0;
  std::size_t heads = 0;
  MitaConfig cfg;
  std::size_t batch = 0;
  std::size_t layers = 0;
  std::size_t reps = 0;
  int threads = 1;
  double median_seconds = 0.0;
  double tokens_per_second = 0.0;
  double cv = 0.0;  // coefficient of variation of the timed reps
  /// flop_count of one attention call, times heads and layers.
  std::uint64_t flops = 0;
  std::uint64_t bytes_moved_estimate = 0;
};

/// Median throughput of a randomly initialised pre-norm transformer forward
/// pass in single precision.
BenchRecord bench_attention(Mechanism mech, std::size_t n, std::size_t dim, std::size_t heads,
                            const MitaConfig& cfg, const BenchOptions& opts = {});

/// Single-precision attention used by the benchmark; d x N column-per-token
/// layout like Mat.
std::vector<float> fast_attention(Mechanism mech, const std::vector<float>& q,
                                  const std::vector<float>& k, const std::vector<float>& v,
                                  std::size_t d, std::size_t n, const MitaConfig& cfg);

/// Largest |float path - double path| over one benchmark-model forward pass on
/// random inputs.
double bench_consistency(Mechanism mech, std::size_t n, std::size_t dim, std::size_t heads,
                         std::size_t layers, const MitaConfig& cfg, std::uint64_t seed);

}  // namespace mita
