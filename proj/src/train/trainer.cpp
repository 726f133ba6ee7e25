// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "mita/parallel.h"
#include "mita/train.h"

namespace mita {

namespace {

std::vector<Mat*> tensors(BlockParams& p) {
  std::vector<Mat*> out;
  p.for_each([&](const std::string&, Mat& t, bool) { out.push_back(&t); });
  return out;
}

std::vector<bool> decay_flags(const BlockParams& p) {
  std::vector<bool> out;
  p.for_each([&](const std::string&, const Mat&, bool decay) { out.push_back(decay); });
  return out;
}

void zero(BlockParams& p) {
  for (Mat* t : tensors(p)) {
    for (double& x : t->data()) x = 0.0;
  }
}

}  // namespace

void TrainConfig::validate() const {
  task.validate();
  attn.cfg.validate();
  if (attn.mech != Mechanism::kFull) attn.cfg.validate_for(task.seq_len);
  model_dims().validate();
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train: lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("train: eps must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train: weight decay must be >= 0");
  if (!(clip_norm >= 0.0)) throw std::invalid_argument("train: clip norm must be >= 0");
  if (eval_size < 1) throw std::invalid_argument("train: eval size must be >= 1");
}

ModelDims TrainConfig::model_dims() const {
  return ModelDims{task.input_vocab(), task.classes(), task.seq_len, dim, layers, heads};
}

TrainConfig recall_config(const AttentionSpec& attn) {
  TrainConfig cfg;
  cfg.task.kind = TaskKind::kRecall;
  cfg.task.seq_len = 64;
  cfg.task.vocab = 16;
  cfg.task.query_slots = 16;
  cfg.attn = attn;
  cfg.lr = 3e-3;
  cfg.warmup_steps = 100;
  cfg.cosine = false;
  return cfg;
}

double TrainConfig::lr_at(std::size_t step) const {
  double scale = 1.0;
  if (warmup_steps > 0 && step < warmup_steps) {
    scale = static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  } else if (cosine && steps > warmup_steps) {
    const double t = static_cast<double>(step - warmup_steps) /
                     static_cast<double>(steps - warmup_steps);
    scale = 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  }
  return lr * scale;
}

TrainDivergence::TrainDivergence(std::size_t step, TrainHistory partial)
    : std::runtime_error("training diverged at step " + std::to_string(step) + " (loss is not finite)"),
      step_(step),
      partial_(std::move(partial)) {}

double evaluate(const BlockParams& params, const TaskSpec& spec, const AttentionSpec& attn,
                std::uint64_t eval_seed, std::size_t count) {
  spec.validate();
  if (params.dims.seq_len != spec.seq_len || params.dims.input_vocab != spec.input_vocab() ||
      params.dims.classes != spec.classes()) {
    throw std::invalid_argument("evaluate: model dims do not fit the task");
  }
  if (count == 0) throw std::invalid_argument("evaluate: empty eval set");
  const TaskBatch data = gen_task_batch(spec, count, eval_stream(eval_seed));
  const std::vector<std::size_t> probes = spec.probe_positions();
  std::vector<std::size_t> correct(count, 0);
  parallel_for(count, [&](std::size_t b) {
    const Mat logits = model_forward(params, data.sequence(b), probes, attn);
    const auto labels = data.targets(b);
    for (std::size_t j = 0; j < probes.size(); ++j) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < logits.rows(); ++c) {
        if (logits(c, j) > logits(best, j)) best = c;
      }
      correct[b] += best == labels[j] ? 1 : 0;
    }
  });
  std::size_t total = 0;
  for (std::size_t c : correct) total += c;
  return static_cast<double>(total) / static_cast<double>(count * probes.size());
}

TrainHistory train_run(const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  TrainHistory history;
  history.params = init_params(cfg.model_dims(), cfg.seed);
  BlockParams& params = history.params;

  BlockParams first_moment = zeros_like(params);
  BlockParams second_moment = zeros_like(params);
  std::vector<BlockParams> sample_grads(cfg.batch, zeros_like(params));
  BlockParams total = zeros_like(params);

  std::vector<Mat*> p_t = tensors(params);
  std::vector<Mat*> m_t = tensors(first_moment);
  std::vector<Mat*> v_t = tensors(second_moment);
  std::vector<Mat*> g_t = tensors(total);
  const std::vector<bool> decay = decay_flags(params);
  std::vector<std::vector<Mat*>> s_t;
  for (BlockParams& g : sample_grads) s_t.push_back(tensors(g));

  const std::vector<std::size_t> probes = cfg.task.probe_positions();
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch);
  std::vector<double> losses(cfg.batch);
  double beta1_pow = 1.0, beta2_pow = 1.0;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const TaskBatch data = gen_task_batch(cfg.task, cfg.batch, step);
    parallel_for(cfg.batch, [&](std::size_t b) {
      zero(sample_grads[b]);
      losses[b] = model_loss_grad(params, data.sequence(b), probes, data.targets(b), cfg.attn,
                                  inv_batch, sample_grads[b]);
    });

    double loss = 0.0;
    for (double l : losses) loss += l;
    loss *= inv_batch;
    if (!std::isfinite(loss)) throw TrainDivergence(step, std::move(history));

    double sq_norm = 0.0;
    for (std::size_t t = 0; t < g_t.size(); ++t) {
      auto acc = g_t[t]->data();
      for (double& x : acc) x = 0.0;
      for (std::size_t b = 0; b < cfg.batch; ++b) {
        auto src = s_t[b][t]->data();
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
      }
      for (double x : acc) sq_norm += x * x;
    }
    const double norm = std::sqrt(sq_norm);
    const double clip = cfg.clip_norm > 0.0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;

    const double lr = cfg.lr_at(step);
    beta1_pow *= cfg.beta1;
    beta2_pow *= cfg.beta2;
    const double bias1 = 1.0 - beta1_pow;
    const double bias2 = 1.0 - beta2_pow;
    for (std::size_t t = 0; t < p_t.size(); ++t) {
      auto p = p_t[t]->data();
      auto m = m_t[t]->data();
      auto v = v_t[t]->data();
      auto g = g_t[t]->data();
      const double wd = decay[t] ? cfg.weight_decay : 0.0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g[i] * clip;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
        const double update = (m[i] / bias1) / (std::sqrt(v[i] / bias2) + cfg.eps);
        p[i] -= lr * (update + wd * p[i]);
      }
    }

    history.loss.push_back(loss);
    if (on_step) on_step(step, loss);
    const bool last = step + 1 == cfg.steps;
    if (cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || last)) {
      history.evals.push_back(
          {step + 1, evaluate(params, cfg.task, cfg.attn, cfg.eval_seed, cfg.eval_size)});
    }
  }
  if (!params.all_finite()) throw TrainDivergence(cfg.steps, std::move(history));
  return history;
}

}  // namespace mita
