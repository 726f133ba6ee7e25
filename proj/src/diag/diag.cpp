// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <charconv>
#include <sstream>
#include <stdexcept>
#include <string>

#include "mita/diag.h"
#include "mita/parallel.h"

namespace mita {

CoverageMask coverage_mask(const ExpertSet& experts, std::size_t n) {
  CoverageMask out;
  out.mask.assign(n, false);
  std::size_t hits = 0;
  for (const IndexList& list : experts.indices) {
    for (std::size_t j : list) {
      if (j >= n) throw std::out_of_range("coverage_mask: expert index outside sequence");
      if (!out.mask[j]) {
        out.mask[j] = true;
        ++hits;
      }
    }
  }
  out.ratio = n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
  return out;
}

double set_iou(const IndexList& a, const IndexList& b) {
  IndexList x(a), y(b);
  std::sort(x.begin(), x.end());
  x.erase(std::unique(x.begin(), x.end()), x.end());
  std::sort(y.begin(), y.end());
  y.erase(std::unique(y.begin(), y.end()), y.end());
  IndexList both;
  std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(both));
  const std::size_t uni = x.size() + y.size() - both.size();
  return uni == 0 ? 0.0 : static_cast<double>(both.size()) / static_cast<double>(uni);
}

double overlap_miou(const ExpertSet& experts, const RoutingTable& routing, std::size_t n) {
  if (experts.count() == 0) throw std::invalid_argument("overlap_miou: no routed experts");
  if (routing.assignment.size() != n || routing.group_boundaries.size() != experts.count()) {
    throw std::invalid_argument("overlap_miou: routing table does not match experts or N");
  }
  double total = 0.0;
  for (std::size_t e = 0; e < experts.count(); ++e) {
    const auto first = routing.sorted_query_order.begin();
    const IndexList routed(first + static_cast<std::ptrdiff_t>(routing.group_begin(e)),
                           first + static_cast<std::ptrdiff_t>(routing.group_end(e)));
    total += set_iou(experts.indices[e], routed);
  }
  return total / static_cast<double>(experts.count());
}

LayerDiagnostics model_diagnostics(const BlockParams& params, const TaskSpec& spec,
                                   const AttentionSpec& attn, std::uint64_t eval_seed,
                                   std::size_t count) {
  if (count == 0) throw std::invalid_argument("model_diagnostics: empty eval set");
  const TaskBatch data = gen_task_batch(spec, count, eval_stream(eval_seed));
  const std::size_t layers = params.dims.layers;
  const std::size_t n = params.dims.seq_len;
  // [sequence][layer] sums over heads.
  std::vector<std::vector<double>> cov(count, std::vector<double>(layers, 0.0));
  std::vector<std::vector<double>> iou(count, std::vector<double>(layers, 0.0));
  parallel_for(count, [&](std::size_t b) {
    const auto traces = attention_traces(params, data.sequence(b), attn);
    for (std::size_t l = 0; l < layers; ++l) {
      for (const MitaTrace& t : traces[l]) {
        if (t.experts.count() == 0) continue;
        cov[b][l] += coverage_mask(t.experts, n).ratio;
        iou[b][l] += overlap_miou(t.experts, t.routing, n);
      }
    }
  });
  LayerDiagnostics out;
  out.coverage.assign(layers, 0.0);
  out.miou.assign(layers, 0.0);
  const double norm = 1.0 / static_cast<double>(count * params.dims.heads);
  for (std::size_t b = 0; b < count; ++b) {
    for (std::size_t l = 0; l < layers; ++l) {
      out.coverage[l] += cov[b][l] * norm;
      out.miou[l] += iou[b][l] * norm;
    }
  }
  return out;
}

std::string attention_label(const AttentionSpec& attn) {
  std::string label(mechanism_name(attn.mech));
  switch (attn.mech) {
    case Mechanism::kFull: break;
    case Mechanism::kCompressionOnly: label += "(m=" + std::to_string(attn.cfg.m) + ")"; break;
    default:
      label += "(m=" + std::to_string(attn.cfg.m) + ",k=" + std::to_string(attn.cfg.k) + ")";
  }
  return label;
}

std::vector<std::pair<std::size_t, std::size_t>> parse_grid(const std::string& text) {
  const auto usage = [&](const std::string& why) {
    return std::invalid_argument("grid '" + text + "': " + why +
                                 " (expected a comma-separated list like 16x16,32x32)");
  };
  if (text.empty()) throw usage("empty grid");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::stringstream in(text);
  std::string cell;
  const auto number = [&](std::string_view s) {
    std::size_t value = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
      throw usage("bad number '" + std::string(s) + "'");
    }
    return value;
  };
  while (std::getline(in, cell, ',')) {
    const auto x = cell.find('x');
    if (x == std::string::npos) throw usage("cell '" + cell + "' has no 'x'");
    const std::string_view view(cell);
    out.emplace_back(number(view.substr(0, x)), number(view.substr(x + 1)));
  }
  if (out.empty() || text.back() == ',') throw usage("empty cell");
  return out;
}

SweepResult mk_sweep(const BlockParams& params, const TaskSpec& spec, const AttentionSpec& trained,
                     const std::vector<std::pair<std::size_t, std::size_t>>& grid,
                     std::uint64_t eval_seed, std::size_t count) {
  SweepResult out;
  out.baseline.m = trained.cfg.m;
  out.baseline.k = trained.cfg.k;
  out.baseline.accuracy = evaluate(params, spec, trained, eval_seed, count);
  for (const auto& [m, k] : grid) {
    SweepCell cell{m, k, std::nullopt, {}};
    const AttentionSpec attn{Mechanism::kMita, MitaConfig::full(m, k)};
    try {
      attn.cfg.validate_for(spec.seq_len);
      cell.accuracy = evaluate(params, spec, attn, eval_seed, count);
    } catch (const std::invalid_argument& e) {
      cell.skip_reason = e.what();
    }
    out.cells.push_back(std::move(cell));
  }
  const double bar = 0.99 * *out.baseline.accuracy;
  for (std::size_t i = 0; i < out.cells.size(); ++i) {
    const auto& acc = out.cells[i].accuracy;
    if (!acc) continue;
    if (!out.best || *acc > *out.cells[*out.best].accuracy) out.best = i;
    if (*acc >= bar) out.cells_ge_99pct.push_back(i);
  }
  return out;
}

CrossMatrix cross_mech_matrix(const std::vector<ModelFile>& models,
                              const std::vector<AttentionSpec>& infer, const TaskSpec& spec,
                              std::uint64_t eval_seed, std::size_t count) {
  CrossMatrix out;
  for (const ModelFile& model : models) out.train_labels.push_back(attention_label(model.attn));
  for (const AttentionSpec& attn : infer) out.infer_labels.push_back(attention_label(attn));
  for (const ModelFile& model : models) {
    auto& row = out.accuracy.emplace_back();
    for (const AttentionSpec& attn : infer) {
      try {
        row.push_back(evaluate(model.params, spec, attn, eval_seed, count));
      } catch (const std::invalid_argument&) {
        row.push_back(std::nullopt);
      }
    }
  }
  return out;
}

}  // namespace mita
