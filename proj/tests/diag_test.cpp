// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "mita/diag.h"
#include "mita/reference.h"
#include "mita/rng.h"

namespace mita {
namespace {

struct Qkv {
  Mat q, k, v;
};

Qkv random_qkv(std::size_t d, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Qkv out;
  out.q = random_normal(d, n, rng);
  out.k = random_normal(d, n, rng);
  out.v = random_normal(d, n, rng);
  return out;
}

ExpertSet experts_of(const Qkv& x, std::size_t m, std::size_t k) {
  return build_experts(build_landmarks(x.q, x.k, x.v, m), x.k, x.v, k);
}

ExpertSet hand_experts(std::vector<IndexList> lists) {
  ExpertSet e;
  e.indices = std::move(lists);
  return e;
}

RoutingTable hand_routing(std::vector<std::size_t> assignment, std::size_t m) {
  RoutingTable r;
  r.assignment = assignment;
  for (std::size_t e = 0; e < m; ++e) {
    for (std::size_t j = 0; j < assignment.size(); ++j) {
      if (assignment[j] == e) r.sorted_query_order.push_back(j);
    }
    r.group_boundaries.push_back(r.sorted_query_order.size());
  }
  return r;
}

// --- coverage ------------------------------------------------------------

TEST(Coverage, FullWidthCoversEverything) {
  const Qkv x = random_qkv(4, 20, 1);
  const CoverageMask c = coverage_mask(experts_of(x, 3, 20), 20);
  EXPECT_EQ(c.ratio, 1.0);
  for (bool b : c.mask) EXPECT_TRUE(b);
}

TEST(Coverage, SingleExpertSingleKey) {
  const Qkv x = random_qkv(4, 10, 2);
  EXPECT_DOUBLE_EQ(coverage_mask(experts_of(x, 1, 1), 10).ratio, 0.1);
}

TEST(Coverage, HandUnion) {
  const CoverageMask c = coverage_mask(hand_experts({{0, 1}, {1, 2}}), 4);
  EXPECT_EQ(c.mask, (std::vector<bool>{true, true, true, false}));
  EXPECT_DOUBLE_EQ(c.ratio, 0.75);
}

TEST(Coverage, BoundedByExpertBudget) {
  for (std::size_t n : {16u, 32u, 64u, 128u}) {
    const Qkv x = random_qkv(4, n, n);
    const CoverageMask c = coverage_mask(experts_of(x, 4, 3), n);
    EXPECT_LE(c.ratio * static_cast<double>(n), 12.0 + 1e-12);
    EXPECT_GE(c.ratio * static_cast<double>(n), 3.0 - 1e-12);
  }
}

TEST(Coverage, RejectsOutOfRangeIndex) {
  EXPECT_THROW(coverage_mask(hand_experts({{0, 5}}), 4), std::out_of_range);
}

// --- overlap -------------------------------------------------------------

TEST(Overlap, SetIouHandValues) {
  EXPECT_DOUBLE_EQ(set_iou({0, 1, 2}, {2, 3}), 0.25);
  EXPECT_DOUBLE_EQ(set_iou({3, 1}, {1, 3}), 1.0);
  EXPECT_DOUBLE_EQ(set_iou({0, 1}, {2, 3}), 0.0);
  EXPECT_DOUBLE_EQ(set_iou({}, {}), 0.0);
}

TEST(Overlap, EmptyGroupContributesZero) {
  const ExpertSet experts = hand_experts({{0, 1}, {2, 3}});
  const RoutingTable routing = hand_routing({0, 0, 0, 0}, 2);
  // Expert 0: {0,1} vs {0,1,2,3} -> 1/2; expert 1 receives nothing -> 0.
  EXPECT_DOUBLE_EQ(overlap_miou(experts, routing, 4), 0.25);
}

TEST(Overlap, ExactMatchGivesOne) {
  const ExpertSet experts = hand_experts({{0, 1}, {2, 3}});
  EXPECT_DOUBLE_EQ(overlap_miou(experts, hand_routing({0, 0, 1, 1}, 2), 4), 1.0);
  EXPECT_DOUBLE_EQ(overlap_miou(experts, hand_routing({1, 1, 0, 0}, 2), 4), 0.0);
}

TEST(Overlap, RandomInstancesStayInUnitInterval) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Qkv x = random_qkv(4, 32, seed);
    const MitaTrace t = mita_forward(x.q, x.k, x.v, MitaConfig::full(4, 6));
    const double v = overlap_miou(t.experts, t.routing, 32);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Overlap, MismatchedTableThrows) {
  const ExpertSet experts = hand_experts({{0, 1}, {2, 3}});
  EXPECT_THROW(overlap_miou(experts, hand_routing({0, 1, 1}, 2), 4), std::invalid_argument);
  EXPECT_THROW(overlap_miou(ExpertSet{}, hand_routing({0, 0}, 1), 2), std::invalid_argument);
}

// --- model-level diagnostics --------------------------------------------

TaskSpec small_task() {
  TaskSpec spec;
  spec.seq_len = 16;
  spec.vocab = 8;
  spec.query_slots = 2;
  return spec;
}

BlockParams small_model(const TaskSpec& spec, std::uint64_t seed) {
  return init_params(ModelDims{spec.input_vocab(), spec.classes(), spec.seq_len, 8, 2, 2}, seed);
}

TEST(ModelDiagnostics, FullWidthCoverageIsOne) {
  const TaskSpec spec = small_task();
  const LayerDiagnostics d = model_diagnostics(
      small_model(spec, 1), spec, AttentionSpec{Mechanism::kMita, MitaConfig::full(4, 16)}, 1, 6);
  ASSERT_EQ(d.coverage.size(), 2u);
  for (double c : d.coverage) EXPECT_DOUBLE_EQ(c, 1.0);
  for (double v : d.miou) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(ModelDiagnostics, RejectsFullAttention) {
  const TaskSpec spec = small_task();
  EXPECT_THROW(model_diagnostics(small_model(spec, 1), spec, AttentionSpec{}, 1, 2),
               std::invalid_argument);
}

TEST(ModelDiagnostics, TracesMatchModelShape) {
  const TaskSpec spec = small_task();
  const BlockParams p = small_model(spec, 2);
  const TaskBatch batch = gen_task_batch(spec, 1, 0);
  const auto traces =
      attention_traces(p, batch.sequence(0), AttentionSpec{Mechanism::kRouteOnly, MitaConfig::route_only(4, 3)});
  ASSERT_EQ(traces.size(), 2u);
  for (const auto& layer : traces) {
    ASSERT_EQ(layer.size(), 2u);
    for (const MitaTrace& t : layer) {
      EXPECT_EQ(t.experts.count(), 4u);
      EXPECT_EQ(t.experts.width(), 3u);
      EXPECT_EQ(t.out.cols(), spec.seq_len);
    }
  }
}

// --- sweep ---------------------------------------------------------------

TEST(Grid, Parses) {
  const auto g = parse_grid("16x16,32x8");
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[0], (std::pair<std::size_t, std::size_t>{16, 16}));
  EXPECT_EQ(g[1], (std::pair<std::size_t, std::size_t>{32, 8}));
}

TEST(Grid, RejectsMalformed) {
  for (const char* bad : {"", "16", "16x", "x4", "ax3", "16x16,", "4x4,,8x8", "4x-1"}) {
    EXPECT_THROW(parse_grid(bad), std::invalid_argument) << bad;
  }
}

TEST(Sweep, TrainingCellEqualsBaseline) {
  const TaskSpec spec = small_task();
  BlockParams p = small_model(spec, 3);
  Rng rng(1);
  p.head = random_normal(p.head.rows(), p.head.cols(), rng);
  const AttentionSpec trained{Mechanism::kMita, MitaConfig::full(4, 4)};
  const SweepResult r = mk_sweep(p, spec, trained, {{4, 4}}, 2, 32);
  ASSERT_EQ(r.cells.size(), 1u);
  EXPECT_EQ(*r.cells[0].accuracy, *r.baseline.accuracy);
  EXPECT_EQ(r.best, std::optional<std::size_t>(0));
  EXPECT_EQ(r.cells_ge_99pct, std::vector<std::size_t>{0});
}

TEST(Sweep, InvalidCellIsSkipped) {
  const TaskSpec spec = small_task();
  const SweepResult r = mk_sweep(small_model(spec, 3), spec,
                                 AttentionSpec{Mechanism::kMita, MitaConfig::full(4, 4)},
                                 {{4, 4}, {32, 4}, {0, 4}}, 2, 8);
  ASSERT_EQ(r.cells.size(), 3u);
  EXPECT_TRUE(r.cells[0].accuracy.has_value());
  EXPECT_FALSE(r.cells[1].accuracy.has_value());
  EXPECT_FALSE(r.cells[1].skip_reason.empty());
  EXPECT_FALSE(r.cells[2].accuracy.has_value());
}

TEST(Sweep, UntrainedCellsAreNearChance) {
  const TaskSpec spec = small_task();
  const SweepResult r = mk_sweep(small_model(spec, 4), spec, AttentionSpec{}, {{2, 2}, {4, 8}, {16, 16}}, 3, 200);
  for (const SweepCell& c : r.cells) EXPECT_NEAR(*c.accuracy, 1.0 / 8.0, 0.06);
}

// --- cross-mechanism matrix ---------------------------------------------

TEST(Cross, SingleCellIsPlainEvaluation) {
  const TaskSpec spec = small_task();
  ModelFile model{small_model(spec, 5), AttentionSpec{}, spec};
  const CrossMatrix m = cross_mech_matrix({model}, {AttentionSpec{}}, spec, 4, 32);
  ASSERT_EQ(m.accuracy.size(), 1u);
  ASSERT_EQ(m.accuracy[0].size(), 1u);
  EXPECT_EQ(*m.accuracy[0][0], evaluate(model.params, spec, AttentionSpec{}, 4, 32));
}

TEST(Cross, IncludesDiagonalAndMarksIncompatibleCells) {
  const TaskSpec spec = small_task();
  const AttentionSpec mita{Mechanism::kMita, MitaConfig::full(4, 4)};
  ModelFile a{small_model(spec, 5), AttentionSpec{}, spec};
  ModelFile b{small_model(spec, 6), mita, spec};
  TaskSpec longer = spec;
  longer.seq_len = 24;
  ModelFile c{init_params(ModelDims{spec.input_vocab(), spec.classes(), 24, 8, 1, 2}, 1), AttentionSpec{}, longer};
  const CrossMatrix m = cross_mech_matrix({a, b, c}, {AttentionSpec{}, mita}, spec, 4, 16);
  ASSERT_EQ(m.accuracy.size(), 3u);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_TRUE(m.accuracy[i][j].has_value());
  }
  EXPECT_FALSE(m.accuracy[2][0].has_value());
  EXPECT_EQ(m.train_labels[1], "mita(m=4,k=4)");
  EXPECT_EQ(m.infer_labels[0], "full");
}

TEST(Cross, Labels) {
  EXPECT_EQ(attention_label(AttentionSpec{Mechanism::kCompressionOnly, MitaConfig::compression_only(8)}),
            "compression-only(m=8)");
  EXPECT_EQ(attention_label(AttentionSpec{Mechanism::kRouteOnly, MitaConfig::route_only(2, 3)}),
            "route-only(m=2,k=3)");
}

// --- benchmark -----------------------------------------------------------

std::vector<float> to_floats(const Mat& m) { return {m.data().begin(), m.data().end()}; }

double max_diff(const std::vector<float>& a, const Mat& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b.data()[i]));
  return worst;
}

TEST(FastAttention, MatchesDoublePrecision) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Qkv x = random_qkv(8, 150, seed);
    const auto q = to_floats(x.q), k = to_floats(x.k), v = to_floats(x.v);
    EXPECT_LT(max_diff(fast_attention(Mechanism::kFull, q, k, v, 8, 150, {}), full_attention(x.q, x.k, x.v)), 1e-5);
    for (Mechanism mech : {Mechanism::kMita, Mechanism::kCompressionOnly, Mechanism::kRouteOnly}) {
      const MitaConfig cfg = config_for(mech, 7, 20);
      EXPECT_LT(max_diff(fast_attention(mech, q, k, v, 8, 150, cfg), attention(mech, x.q, x.k, x.v, cfg)), 1e-5)
          << mechanism_name(mech);
    }
  }
}

TEST(FastAttention, ForwardPassMatchesDoublePrecision) {
  for (Mechanism mech : {Mechanism::kFull, Mechanism::kMita, Mechanism::kCompressionOnly,
                         Mechanism::kRouteOnly}) {
    EXPECT_LT(bench_consistency(mech, 100, 32, 2, 3, MitaConfig::full(8, 12), 1), 1e-4);
  }
}

TEST(FastAttention, RejectsBadOperands) {
  std::vector<float> q(12), k(12), v(11);
  EXPECT_THROW(fast_attention(Mechanism::kFull, q, k, v, 3, 4, {}), std::invalid_argument);
  v.resize(12);
  EXPECT_THROW(fast_attention(Mechanism::kMita, q, k, v, 3, 4, MitaConfig::full(5, 1)), std::invalid_argument);
}

TEST(Bench, RecordFields) {
  BenchOptions opts;
  opts.token_budget = 256;
  const BenchRecord r = bench_attention(Mechanism::kMita, 64, 16, 2, MitaConfig::full(4, 8), opts);
  EXPECT_EQ(r.n, 64u);
  EXPECT_EQ(r.layers, 3u);
  EXPECT_EQ(r.reps, 3u);
  EXPECT_GE(r.batch, 1u);
  EXPECT_LE(r.batch * r.n, 256u);
  EXPECT_GT(r.tokens_per_second, 0.0);
  EXPECT_GE(r.cv, 0.0);
  EXPECT_EQ(r.flops, flop_count(Mechanism::kMita, 64, 8, MitaConfig::full(4, 8)) * 2 * 3);
  EXPECT_GT(r.bytes_moved_estimate, 0u);
}

TEST(Bench, FullFlopsQuadruple) {
  BenchOptions opts;
  opts.token_budget = 1;
  const BenchRecord a = bench_attention(Mechanism::kFull, 32, 16, 2, {}, opts);
  const BenchRecord b = bench_attention(Mechanism::kFull, 64, 16, 2, {}, opts);
  EXPECT_EQ(b.flops, 4 * a.flops);
}

TEST(Bench, RejectsBadOptions) {
  BenchOptions opts;
  opts.reps = 2;
  EXPECT_THROW(bench_attention(Mechanism::kFull, 32, 16, 2, {}, opts), std::invalid_argument);
  opts = BenchOptions{};
  opts.warmup = 0;
  EXPECT_THROW(bench_attention(Mechanism::kFull, 32, 16, 2, {}, opts), std::invalid_argument);
  EXPECT_THROW(bench_attention(Mechanism::kFull, 32, 15, 2, {}), std::invalid_argument);
  EXPECT_THROW(bench_attention(Mechanism::kMita, 32, 16, 2, MitaConfig::full(64, 4)), std::invalid_argument);
}

}  // namespace
}  // namespace mita
