// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "mita/grad.h"
#include "mita/ops.h"
#include "mita/rng.h"
#include "mita/train.h"

namespace mita {

namespace {

constexpr double kLnEps = 1e-5;

struct NormCache {
  Mat xhat;
  std::vector<double> inv_std;
};

// Per-column layer norm with a gain and no bias.
Mat layer_norm(const Mat& x, const Mat& gain, NormCache* cache) {
  const std::size_t d = x.rows();
  const std::size_t n = x.cols();
  std::vector<double> mean(n, 0.0), var(n, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = x.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) mean[j] += row[j];
  }
  for (double& mu : mean) mu /= static_cast<double>(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = x.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) {
      const double c = row[j] - mean[j];
      var[j] += c * c;
    }
  }
  std::vector<double> inv(n);
  for (std::size_t j = 0; j < n; ++j) inv[j] = 1.0 / std::sqrt(var[j] / static_cast<double>(d) + kLnEps);
  Mat xhat(d, n);
  Mat y(d, n);
  for (std::size_t i = 0; i < d; ++i) {
    const double* row = x.row_ptr(i);
    double* xh = xhat.row_ptr(i);
    double* out = y.row_ptr(i);
    const double g = gain(i, 0);
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = (row[j] - mean[j]) * inv[j];
      out[j] = g * xh[j];
    }
  }
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

Mat layer_norm_backward(const Mat& dy, const NormCache& cache, const Mat& gain, Mat& dgain) {
  const std::size_t d = dy.rows();
  const std::size_t n = dy.cols();
  std::vector<double> mean_dxhat(n, 0.0), mean_dxhat_xhat(n, 0.0);
  Mat dxhat(d, n);
  for (std::size_t i = 0; i < d; ++i) {
    const double g = gain(i, 0);
    const double* dyr = dy.row_ptr(i);
    const double* xh = cache.xhat.row_ptr(i);
    double* dxh = dxhat.row_ptr(i);
    double dg = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dg += dyr[j] * xh[j];
      dxh[j] = dyr[j] * g;
      mean_dxhat[j] += dxh[j];
      mean_dxhat_xhat[j] += dxh[j] * xh[j];
    }
    dgain(i, 0) += dg;
  }
  const double inv_d = 1.0 / static_cast<double>(d);
  Mat dx(d, n);
  for (std::size_t i = 0; i < d; ++i) {
    const double* xh = cache.xhat.row_ptr(i);
    const double* dxh = dxhat.row_ptr(i);
    double* out = dx.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) {
      out[j] = cache.inv_std[j] *
               (dxh[j] - mean_dxhat[j] * inv_d - xh[j] * mean_dxhat_xhat[j] * inv_d);
    }
  }
  return dx;
}

void add_bias(Mat& x, const Mat& bias) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* row = x.row_ptr(i);
    const double b = bias(i, 0);
    for (std::size_t j = 0; j < x.cols(); ++j) row[j] += b;
  }
}

void add_row_sums(const Mat& x, Mat& acc) {
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* row = x.row_ptr(i);
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += row[j];
    acc(i, 0) += s;
  }
}

struct LayerCache {
  NormCache norm_attn, norm_mlp;
  Mat h_attn, q, k, v, attn, h_mlp, pre, act;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
};

void check_tokens(const ModelDims& dims, std::span<const std::uint32_t> tokens) {
  if (tokens.size() != dims.seq_len) {
    throw std::invalid_argument("model: sequence length " + std::to_string(tokens.size()) +
                                " does not match model length " + std::to_string(dims.seq_len));
  }
  for (std::uint32_t t : tokens) {
    if (t >= dims.input_vocab) {
      throw std::invalid_argument("model: token id " + std::to_string(t) + " outside vocabulary of " +
                                  std::to_string(dims.input_vocab));
    }
  }
}

void check_probes(const ModelDims& dims, std::span<const std::size_t> probes) {
  if (probes.empty()) throw std::invalid_argument("model: no probe positions");
  for (std::size_t p : probes) {
    if (p >= dims.seq_len) throw std::invalid_argument("model: probe position out of range");
  }
}

Mat multi_head_attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads,
                         const AttentionSpec& attn, std::vector<MitaTrace>* traces) {
  const std::size_t dh = q.rows() / heads;
  Mat out(q.rows(), q.cols());
  for (std::size_t h = 0; h < heads; ++h) {
    const Mat qh = q.row_block(h * dh, dh);
    const Mat kh = k.row_block(h * dh, dh);
    const Mat vh = v.row_block(h * dh, dh);
    if (traces) {
      traces->push_back(mita_forward(qh, kh, vh, attn.cfg));
      out.set_row_block(h * dh, traces->back().out);
    } else {
      out.set_row_block(h * dh, attention(attn.mech, qh, kh, vh, attn.cfg));
    }
  }
  return out;
}

// Residual stream after the last block, D x N.
Mat run_blocks(const BlockParams& p, std::span<const std::uint32_t> tokens, const AttentionSpec& attn,
               ForwardCache* cache, std::vector<std::vector<MitaTrace>>* traces = nullptr) {
  const ModelDims& dims = p.dims;
  const std::size_t n = dims.seq_len;
  Mat x(dims.dim, n);
  for (std::size_t i = 0; i < dims.dim; ++i) {
    double* row = x.row_ptr(i);
    const double* pos = p.pos_embed.row_ptr(i);
    const double* tok = p.tok_embed.row_ptr(i);
    for (std::size_t j = 0; j < n; ++j) row[j] = tok[tokens[j]] + pos[j];
  }
  if (cache) cache->layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const LayerParams& lp = p.layers[l];
    LayerCache local;
    LayerCache& c = cache ? cache->layers[l] : local;
    c.h_attn = layer_norm(x, lp.ln_attn, &c.norm_attn);
    c.q = matmul(lp.wq, c.h_attn);
    c.k = matmul(lp.wk, c.h_attn);
    c.v = matmul(lp.wv, c.h_attn);
    std::vector<MitaTrace>* layer_traces = nullptr;
    if (traces) layer_traces = &traces->emplace_back();
    c.attn = multi_head_attention(c.q, c.k, c.v, dims.heads, attn, layer_traces);
    x += matmul(lp.wo, c.attn);
    c.h_mlp = layer_norm(x, lp.ln_mlp, &c.norm_mlp);
    c.pre = matmul(lp.w1, c.h_mlp);
    add_bias(c.pre, lp.b1);
    c.act = c.pre;
    for (double& a : c.act.data()) a = std::max(a, 0.0);
    Mat mlp = matmul(lp.w2, c.act);
    add_bias(mlp, lp.b2);
    x += mlp;
  }
  return x;
}

Mat probe_logits(const BlockParams& p, const Mat& x, std::span<const std::size_t> probes,
                 NormCache* norm, Mat* normed) {
  Mat h = layer_norm(gather_cols(x, probes), p.ln_final, norm);
  Mat logits = matmul(p.head, h);
  add_bias(logits, p.head_bias);
  if (normed) *normed = std::move(h);
  return logits;
}

Mat init_matrix(std::size_t rows, std::size_t cols, double scale, Rng& rng) {
  Mat m(rows, cols);
  for (double& x : m.data()) x = scale * rng.truncated_normal();
  return m;
}

}  // namespace

void ModelDims::validate() const {
  if (input_vocab < 2 || classes < 2) throw std::invalid_argument("model: vocabulary must be >= 2");
  if (seq_len < 1 || dim < 1 || layers < 1 || heads < 1) {
    throw std::invalid_argument("model: dimensions must be positive");
  }
  if (dim % heads != 0) {
    throw std::invalid_argument("model: dim " + std::to_string(dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
}

void BlockParams::for_each(const std::function<void(const std::string&, Mat&, bool)>& fn) {
  fn("tok_embed", tok_embed, false);
  fn("pos_embed", pos_embed, false);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    LayerParams& lp = layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    fn(pre + "wq", lp.wq, true);
    fn(pre + "wk", lp.wk, true);
    fn(pre + "wv", lp.wv, true);
    fn(pre + "wo", lp.wo, true);
    fn(pre + "ln_attn", lp.ln_attn, false);
    fn(pre + "ln_mlp", lp.ln_mlp, false);
    fn(pre + "w1", lp.w1, true);
    fn(pre + "b1", lp.b1, false);
    fn(pre + "w2", lp.w2, true);
    fn(pre + "b2", lp.b2, false);
  }
  fn("ln_final", ln_final, false);
  fn("head", head, true);
  fn("head_bias", head_bias, false);
}

void BlockParams::for_each(
    const std::function<void(const std::string&, const Mat&, bool)>& fn) const {
  const_cast<BlockParams*>(this)->for_each(
      [&](const std::string& name, Mat& t, bool decay) { fn(name, t, decay); });
}

std::size_t BlockParams::parameter_count() const {
  std::size_t total = 0;
  for_each([&](const std::string&, const Mat& t, bool) { total += t.size(); });
  return total;
}

bool BlockParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Mat& t, bool) { ok = ok && t.all_finite(); });
  return ok;
}

BlockParams init_params(const ModelDims& dims, std::uint64_t seed) {
  dims.validate();
  Rng rng = Rng::derive(seed, 0x1d17);
  const std::size_t d = dims.dim;
  const std::size_t hidden = dims.hidden();
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  BlockParams p;
  p.dims = dims;
  p.tok_embed = init_matrix(d, dims.input_vocab, 1.0, rng);
  p.pos_embed = init_matrix(d, dims.seq_len, 1.0, rng);
  for (std::size_t l = 0; l < dims.layers; ++l) {
    LayerParams lp;
    lp.wq = init_matrix(d, d, proj, rng);
    lp.wk = init_matrix(d, d, proj, rng);
    lp.wv = init_matrix(d, d, proj, rng);
    lp.wo = init_matrix(d, d, proj, rng);
    lp.ln_attn = Mat(d, 1, 1.0);
    lp.ln_mlp = Mat(d, 1, 1.0);
    lp.w1 = init_matrix(hidden, d, proj, rng);
    lp.b1 = Mat(hidden, 1);
    lp.w2 = init_matrix(d, hidden, 1.0 / std::sqrt(static_cast<double>(hidden)), rng);
    lp.b2 = Mat(d, 1);
    p.layers.push_back(std::move(lp));
  }
  p.ln_final = Mat(d, 1, 1.0);
  p.head = Mat(dims.classes, d);
  p.head_bias = Mat(dims.classes, 1);
  return p;
}

BlockParams zeros_like(const BlockParams& like) {
  BlockParams z = like;
  z.for_each([](const std::string&, Mat& t, bool) {
    for (double& x : t.data()) x = 0.0;
  });
  return z;
}

Mat model_forward(const BlockParams& params, std::span<const std::uint32_t> tokens,
                  std::span<const std::size_t> probes, const AttentionSpec& attn) {
  check_tokens(params.dims, tokens);
  check_probes(params.dims, probes);
  const Mat x = run_blocks(params, tokens, attn, nullptr);
  return probe_logits(params, x, probes, nullptr, nullptr);
}

std::vector<std::vector<MitaTrace>> attention_traces(const BlockParams& params,
                                                     std::span<const std::uint32_t> tokens,
                                                     const AttentionSpec& attn) {
  if (attn.mech == Mechanism::kFull) {
    throw std::invalid_argument("attention_traces: full attention has no experts to trace");
  }
  check_tokens(params.dims, tokens);
  AttentionSpec effective = attn;
  if (attn.mech != Mechanism::kMita) effective.cfg = config_for(attn.mech, attn.cfg.m, attn.cfg.k);
  effective.cfg.validate_for(params.dims.seq_len);
  std::vector<std::vector<MitaTrace>> traces;
  run_blocks(params, tokens, effective, nullptr, &traces);
  return traces;
}

double model_loss_grad(const BlockParams& params, std::span<const std::uint32_t> tokens,
                       std::span<const std::size_t> probes, std::span<const std::uint32_t> labels,
                       const AttentionSpec& attn, double scale, BlockParams& grad) {
  const ModelDims& dims = params.dims;
  check_tokens(dims, tokens);
  check_probes(dims, probes);
  if (labels.size() != probes.size()) throw std::invalid_argument("model: one label per probe");
  for (std::uint32_t y : labels) {
    if (y >= dims.classes) throw std::invalid_argument("model: label outside class range");
  }

  ForwardCache cache;
  const Mat x = run_blocks(params, tokens, attn, &cache);
  NormCache final_norm;
  Mat h_final;
  Mat logits = probe_logits(params, x, probes, &final_norm, &h_final);

  // Softmax cross-entropy, averaged over probes.
  const std::size_t slots = probes.size();
  const double per_probe = 1.0 / static_cast<double>(slots);
  double loss = 0.0;
  Mat dlogits(dims.classes, slots);
  for (std::size_t j = 0; j < slots; ++j) {
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < dims.classes; ++c) peak = std::max(peak, logits(c, j));
    double total = 0.0;
    for (std::size_t c = 0; c < dims.classes; ++c) total += std::exp(logits(c, j) - peak);
    const double log_total = std::log(total) + peak;
    loss += (log_total - logits(labels[j], j)) * per_probe;
    for (std::size_t c = 0; c < dims.classes; ++c) {
      const double prob = std::exp(logits(c, j) - log_total);
      dlogits(c, j) = (prob - (c == labels[j] ? 1.0 : 0.0)) * per_probe * scale;
    }
  }

  grad.head += matmul_nt(dlogits, h_final);
  add_row_sums(dlogits, grad.head_bias);
  const Mat dh_final = matmul_tn(params.head, dlogits);
  const Mat dx_probe = layer_norm_backward(dh_final, final_norm, params.ln_final, grad.ln_final);
  Mat dx(dims.dim, dims.seq_len);
  for (std::size_t j = 0; j < slots; ++j) {
    for (std::size_t i = 0; i < dims.dim; ++i) dx(i, probes[j]) += dx_probe(i, j);
  }

  const std::size_t dh = dims.dim / dims.heads;
  const VjpOptions vjp{false, 0.0};
  for (std::size_t l = params.layers.size(); l-- > 0;) {
    const LayerParams& lp = params.layers[l];
    LayerParams& lg = grad.layers[l];
    const LayerCache& c = cache.layers[l];

    // MLP branch.
    add_row_sums(dx, lg.b2);
    lg.w2 += matmul_nt(dx, c.act);
    Mat dpre = matmul_tn(lp.w2, dx);
    {
      auto dp = dpre.data();
      auto pre = c.pre.data();
      for (std::size_t i = 0; i < dp.size(); ++i) {
        if (pre[i] <= 0.0) dp[i] = 0.0;
      }
    }
    add_row_sums(dpre, lg.b1);
    lg.w1 += matmul_nt(dpre, c.h_mlp);
    dx += layer_norm_backward(matmul_tn(lp.w1, dpre), c.norm_mlp, lp.ln_mlp, lg.ln_mlp);

    // Attention branch.
    lg.wo += matmul_nt(dx, c.attn);
    const Mat dattn = matmul_tn(lp.wo, dx);
    Mat dq(dims.dim, dims.seq_len), dk(dims.dim, dims.seq_len), dv(dims.dim, dims.seq_len);
    for (std::size_t h = 0; h < dims.heads; ++h) {
      const AttentionGrads g =
          attention_vjp(attn.mech, c.q.row_block(h * dh, dh), c.k.row_block(h * dh, dh),
                        c.v.row_block(h * dh, dh), attn.cfg, dattn.row_block(h * dh, dh), vjp);
      dq.set_row_block(h * dh, g.dq);
      dk.set_row_block(h * dh, g.dk);
      dv.set_row_block(h * dh, g.dv);
    }
    lg.wq += matmul_nt(dq, c.h_attn);
    lg.wk += matmul_nt(dk, c.h_attn);
    lg.wv += matmul_nt(dv, c.h_attn);
    Mat dh_attn = matmul_tn(lp.wq, dq);
    dh_attn += matmul_tn(lp.wk, dk);
    dh_attn += matmul_tn(lp.wv, dv);
    dx += layer_norm_backward(dh_attn, c.norm_attn, lp.ln_attn, lg.ln_attn);
  }

  grad.pos_embed += dx;
  for (std::size_t i = 0; i < dims.dim; ++i) {
    const double* row = dx.row_ptr(i);
    double* tok = grad.tok_embed.row_ptr(i);
    for (std::size_t j = 0; j < dims.seq_len; ++j) tok[tokens[j]] += row[j];
  }
  return loss;
}

}  // namespace mita
