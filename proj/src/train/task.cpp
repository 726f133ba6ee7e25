// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

#include "mita/rng.h"
#include "mita/train.h"

namespace mita {

TaskKind parse_task(std::string_view name) {
  if (name == "recall") return TaskKind::kRecall;
  if (name == "copy") return TaskKind::kCopy;
  throw std::invalid_argument("unknown task '" + std::string(name) + "' (expected recall or copy)");
}

std::string_view task_name(TaskKind kind) { return kind == TaskKind::kRecall ? "recall" : "copy"; }

void TaskSpec::validate() const {
  if (seq_len < 4) throw std::invalid_argument("task: sequence length must be >= 4");
  if (vocab < 2) throw std::invalid_argument("task: vocabulary must be >= 2");
  if (query_slots < 1) throw std::invalid_argument("task: need at least one query slot");
  if (kind == TaskKind::kCopy && query_slots != 1) {
    throw std::invalid_argument("task: copy has exactly one query slot");
  }
  if (kind == TaskKind::kRecall) {
    if (query_slots >= seq_len - 1) throw std::invalid_argument("task: too many query slots");
    if (query_slots > pairs()) {
      throw std::invalid_argument("task: more query slots than stored pairs (" +
                                  std::to_string(pairs()) + ")");
    }
  }
}

std::size_t TaskSpec::pairs() const {
  if (seq_len <= query_slots) return 0;
  return std::min(vocab, seq_len - query_slots);
}

std::vector<std::size_t> TaskSpec::probe_positions() const {
  std::vector<std::size_t> pos(query_slots);
  std::iota(pos.begin(), pos.end(), seq_len - query_slots);
  return pos;
}

std::uint32_t copy_target(std::span<const std::uint32_t> tokens, std::size_t mark) {
  if (mark >= tokens.size()) throw std::out_of_range("copy_target: mark outside sequence");
  return tokens[mark];
}

TaskBatch gen_task_batch(const TaskSpec& spec, std::size_t batch, std::uint64_t stream) {
  spec.validate();
  Rng rng = Rng::derive(spec.seed, stream);
  const std::size_t n = spec.seq_len;
  TaskBatch out;
  out.batch = batch;
  out.seq_len = n;
  out.slots = spec.query_slots;
  out.tokens.assign(batch * n, spec.pad_token());
  out.labels.assign(batch * spec.query_slots, 0);
  const auto v = static_cast<std::uint32_t>(spec.vocab);

  std::vector<std::uint32_t> keys(spec.vocab);
  std::vector<std::uint32_t> values(spec.vocab);
  std::vector<std::size_t> positions(n - spec.query_slots);
  for (std::size_t b = 0; b < batch; ++b) {
    std::uint32_t* seq = out.tokens.data() + b * n;
    std::uint32_t* lab = out.labels.data() + b * spec.query_slots;
    if (spec.kind == TaskKind::kRecall) {
      const std::size_t p = spec.pairs();
      const std::size_t prefix = n - spec.query_slots;
      std::iota(keys.begin(), keys.end(), 0u);
      for (std::size_t i = 0; i < p; ++i) {
        std::swap(keys[i], keys[i + rng.below(spec.vocab - i)]);
        values[i] = static_cast<std::uint32_t>(rng.below(v));
      }
      std::iota(positions.begin(), positions.end(), std::size_t{0});
      for (std::size_t i = 0; i < p; ++i) {
        std::swap(positions[i], positions[i + rng.below(prefix - i)]);
        seq[positions[i]] = spec.pair_token(keys[i], values[i]);
      }
      // Probes pick distinct stored pairs.
      std::vector<std::size_t> slot(p);
      std::iota(slot.begin(), slot.end(), std::size_t{0});
      for (std::size_t q = 0; q < spec.query_slots; ++q) {
        std::swap(slot[q], slot[q + rng.below(p - q)]);
        seq[prefix + q] = spec.probe_token(keys[slot[q]]);
        lab[q] = values[slot[q]];
      }
    } else {
      for (std::size_t j = 0; j + 1 < n; ++j) seq[j] = static_cast<std::uint32_t>(rng.below(v));
      const std::size_t mark = rng.below(n - 2);
      seq[mark + 1] = spec.mark_token();
      seq[n - 1] = spec.query_token();
      lab[0] = copy_target({seq, n}, mark);
    }
  }
  return out;
}

}  // namespace mita
