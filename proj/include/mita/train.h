// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mita/mat.h"
#include "mita/mita.h"

namespace mita {

enum class TaskKind { kRecall, kCopy };

TaskKind parse_task(std::string_view name);
std::string_view task_name(TaskKind kind);

/// Synthetic sequence-classification task over a symbol alphabet of size V.
///
/// Token ids: key/value pair tokens 0..V*V-1 (pair (a, x) is a*V + x), probe
/// keys V*V..V*V+V-1, then pad, mark and query. Labels lie in [0, V).
///
/// recall: `pairs()` pair tokens with distinct keys sit at random positions
/// among the first N - query_slots, pad fills the rest of that prefix, and
/// the last `query_slots` positions hold probe keys drawn without replacement
/// from the stored keys. A probe for key a is labelled with the x of (a, x).
///
/// copy: every position but the last holds a random symbol 0..V-1; the mark
/// token overwrites the position right after the marked one and the last
/// position holds the query token. The label is the symbol at the mark.
struct TaskSpec {
  TaskKind kind = TaskKind::kRecall;
  std::size_t seq_len = 64;
  std::size_t vocab = 16;
  std::size_t query_slots = 1;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t input_vocab() const { return vocab * vocab + vocab + 3; }
  std::size_t classes() const { return vocab; }
  std::size_t pairs() const;
  std::uint32_t pair_token(std::size_t key, std::size_t value) const {
    return static_cast<std::uint32_t>(key * vocab + value);
  }
  std::uint32_t probe_token(std::size_t key) const {
    return static_cast<std::uint32_t>(vocab * vocab + key);
  }
  std::uint32_t pad_token() const { return static_cast<std::uint32_t>(vocab * vocab + vocab); }
  std::uint32_t mark_token() const { return pad_token() + 1; }
  std::uint32_t query_token() const { return pad_token() + 2; }
  /// Sequence positions whose outputs are classified, ascending.
  std::vector<std::size_t> probe_positions() const;

  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct TaskBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::size_t slots = 0;
  std::vector<std::uint32_t> tokens;  // batch x seq_len, row-major
  std::vector<std::uint32_t> labels;  // batch x slots, row-major

  std::span<const std::uint32_t> sequence(std::size_t b) const {
    return {tokens.data() + b * seq_len, seq_len};
  }
  std::span<const std::uint32_t> targets(std::size_t b) const {
    return {labels.data() + b * slots, slots};
  }
};

/// Deterministic in (spec.seed, stream).
TaskBatch gen_task_batch(const TaskSpec& spec, std::size_t batch, std::uint64_t stream);

/// Stream of the eval set drawn for `eval_seed`, disjoint from the per-step
/// training streams 0, 1, 2, ...
inline std::uint64_t eval_stream(std::uint64_t eval_seed) {
  return (std::uint64_t{1} << 62) + eval_seed;
}

/// Label rule of the copy task.
std::uint32_t copy_target(std::span<const std::uint32_t> tokens, std::size_t mark);

struct ModelDims {
  std::size_t input_vocab = 275;
  std::size_t classes = 16;
  std::size_t seq_len = 64;
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;

  void validate() const;
  std::size_t hidden() const { return 4 * dim; }
  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

/// One pre-norm block: x + Wo Attn(LN(x)), then x + W2 relu(W1 LN(x) + b1) + b2.
struct LayerParams {
  Mat wq, wk, wv, wo;
  Mat ln_attn, ln_mlp;  // D x 1 gains
  Mat w1, b1;           // 4D x D, 4D x 1
  Mat w2, b2;           // D x 4D, D x 1

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct BlockParams {
  ModelDims dims;
  Mat tok_embed;  // D x input_vocab
  Mat pos_embed;  // D x seq_len
  std::vector<LayerParams> layers;
  Mat ln_final;   // D x 1
  Mat head;       // classes x D
  Mat head_bias;  // classes x 1

  /// Visits every tensor in serialization order. `decay` marks the matrices
  /// that receive weight decay.
  void for_each(const std::function<void(const std::string& name, Mat& t, bool decay)>& fn);
  void for_each(const std::function<void(const std::string& name, const Mat& t, bool decay)>& fn) const;

  std::size_t parameter_count() const;
  bool all_finite() const;
  friend bool operator==(const BlockParams&, const BlockParams&) = default;
};

/// Gains at 1, biases and the classifier head at 0, everything else drawn
/// from a truncated normal scaled by 1/sqrt(fan-in).
BlockParams init_params(const ModelDims& dims, std::uint64_t seed);
/// Same shapes as `like`, all zeros.
BlockParams zeros_like(const BlockParams& like);

struct AttentionSpec {
  Mechanism mech = Mechanism::kFull;
  MitaConfig cfg;
};

/// Class logits (classes x probes.size()) at the given positions.
Mat model_forward(const BlockParams& params, std::span<const std::uint32_t> tokens,
                  std::span<const std::size_t> probes, const AttentionSpec& attn);

/// MiTA internals of every head of every layer for one sequence, indexed
/// [layer][head]. Throws for full attention.
std::vector<std::vector<MitaTrace>> attention_traces(const BlockParams& params,
                                                     std::span<const std::uint32_t> tokens,
                                                     const AttentionSpec& attn);

/// Mean cross-entropy over the probes of one sequence. Adds the gradient of
/// that loss times `scale` into `grad`.
double model_loss_grad(const BlockParams& params, std::span<const std::uint32_t> tokens,
                       std::span<const std::size_t> probes, std::span<const std::uint32_t> labels,
                       const AttentionSpec& attn, double scale, BlockParams& grad);

struct TrainConfig {
  TaskSpec task;
  AttentionSpec attn;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t dim = 64;
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  /// Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
  std::size_t warmup_steps = 0;
  /// Cosine decay of the learning rate to zero over `steps`.
  bool cosine = false;
  std::size_t eval_every = 250;
  std::size_t eval_size = 512;
  std::uint64_t seed = 0;
  std::uint64_t eval_seed = 1;

  void validate() const;
  ModelDims model_dims() const;
  double lr_at(std::size_t step) const;
};

/// Associative recall at N=64 over 16 symbols with 16 query slots, trained
/// for 2000 steps at a constant 3e-3 after 100 warmup steps. `mita train`
/// starts from this configuration.
TrainConfig recall_config(const AttentionSpec& attn = {});

struct EvalPoint {
  std::size_t step = 0;
  double accuracy = 0.0;
};

struct TrainHistory {
  std::vector<double> loss;
  std::vector<EvalPoint> evals;
  BlockParams params;
};

class TrainDivergence : public std::runtime_error {
 public:
  TrainDivergence(std::size_t step, TrainHistory partial);
  std::size_t step() const { return step_; }
  const TrainHistory& partial() const { return partial_; }

 private:
  std::size_t step_;
  TrainHistory partial_;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// AdamW on per-step batches; the batch gradient is reduced in sample order so
/// results are bit-identical for every thread count.
TrainHistory train_run(const TrainConfig& cfg, const StepCallback& on_step = {});

/// Accuracy over `count` fresh sequences drawn from (spec.seed, eval_seed).
double evaluate(const BlockParams& params, const TaskSpec& spec, const AttentionSpec& attn,
                std::uint64_t eval_seed, std::size_t count = 512);

/// A trained model together with what it was trained on.
struct ModelFile {
  BlockParams params;
  AttentionSpec attn;
  TaskSpec task;
};

inline constexpr std::uint32_t kParamsFormatVersion = 1;

void save_model(std::ostream& out, const ModelFile& model);
ModelFile load_model(std::istream& in);
void save_model(const std::string& path, const ModelFile& model);
ModelFile load_model(const std::string& path);

}  // namespace mita
