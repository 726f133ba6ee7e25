// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

// Single-precision forward pass of a pre-norm transformer for throughput
// measurement. Tensors are feature x token, row-major, like Mat.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <limits>
#include <new>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "mita/diag.h"
#include "mita/ops.h"
#include "mita/parallel.h"
#include "mita/rng.h"

namespace mita {

namespace {

#if defined(__AVX512F__)
constexpr std::size_t kLanes = 16;
#elif defined(__AVX__)
constexpr std::size_t kLanes = 8;
#else
constexpr std::size_t kLanes = 4;
#endif
typedef float Lanes __attribute__((vector_size(kLanes * sizeof(float))));

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 2 * kLanes;
constexpr std::size_t kQueryBlock = 128;
constexpr double kLnEps = 1e-5;

Lanes load(const float* p) {
  Lanes v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

void store(float* p, Lanes v) { std::memcpy(p, &v, sizeof(v)); }

void tile(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
          std::size_t ldc, std::size_t inner) {
  const float* a0 = a;
  const float* a1 = a + lda;
  const float* a2 = a + 2 * lda;
  const float* a3 = a + 3 * lda;
  Lanes c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
  for (std::size_t t = 0; t < inner; ++t) {
    const float* brow = b + t * ldb;
    const Lanes b0 = load(brow);
    const Lanes b1 = load(brow + kLanes);
    c00 += a0[t] * b0;
    c01 += a0[t] * b1;
    c10 += a1[t] * b0;
    c11 += a1[t] * b1;
    c20 += a2[t] * b0;
    c21 += a2[t] * b1;
    c30 += a3[t] * b0;
    c31 += a3[t] * b1;
  }
  store(c, c00);
  store(c + kLanes, c01);
  store(c + ldc, c10);
  store(c + ldc + kLanes, c11);
  store(c + 2 * ldc, c20);
  store(c + 2 * ldc + kLanes, c21);
  store(c + 3 * ldc, c30);
  store(c + 3 * ldc + kLanes, c31);
}

// C (rows x cols, ldc) = A (rows x inner, lda) B (inner x cols, ldb).
void sgemm(std::size_t rows, std::size_t cols, std::size_t inner, const float* a, std::size_t lda,
           const float* b, std::size_t ldb, float* c, std::size_t ldc) {
  const std::size_t col_full = cols / kTileCols;
  const std::size_t col_rem = cols - col_full * kTileCols;
  std::vector<float> b_pad;
  if (col_rem > 0) {
    b_pad.assign(inner * kTileCols, 0.0f);
    for (std::size_t t = 0; t < inner; ++t) {
      std::copy_n(b + t * ldb + col_full * kTileCols, col_rem, b_pad.data() + t * kTileCols);
    }
  }
  std::vector<float> a_pad;
  float c_pad[kTileRows * kTileCols];
  for (std::size_t i0 = 0; i0 < rows; i0 += kTileRows) {
    const std::size_t r = std::min(kTileRows, rows - i0);
    const float* a_ptr = a + i0 * lda;
    std::size_t a_ld = lda;
    if (r < kTileRows) {
      a_pad.assign(kTileRows * inner, 0.0f);
      for (std::size_t rr = 0; rr < r; ++rr) {
        std::copy_n(a + (i0 + rr) * lda, inner, a_pad.data() + rr * inner);
      }
      a_ptr = a_pad.data();
      a_ld = inner;
    }
    for (std::size_t jt = 0; jt * kTileCols < cols; ++jt) {
      const std::size_t j0 = jt * kTileCols;
      const bool ragged = jt == col_full;
      const float* b_ptr = ragged ? b_pad.data() : b + j0;
      const std::size_t b_ld = ragged ? kTileCols : ldb;
      if (r == kTileRows && !ragged) {
        tile(a_ptr, a_ld, b_ptr, b_ld, c + i0 * ldc + j0, ldc, inner);
        continue;
      }
      tile(a_ptr, a_ld, b_ptr, b_ld, c_pad, kTileCols, inner);
      const std::size_t w = ragged ? col_rem : kTileCols;
      for (std::size_t rr = 0; rr < r; ++rr) {
        std::copy_n(c_pad + rr * kTileCols, w, c + (i0 + rr) * ldc + j0);
      }
    }
  }
}

// Cephes-style expf; the loop below vectorizes.
inline float exp_approx(float x) {
  x = x < -87.0f ? -87.0f : x;
  x = x > 88.0f ? 88.0f : x;
  constexpr float kRound = 12582912.0f;  // 1.5 * 2^23
  const float n = (x * 1.44269504088896341f + kRound) - kRound;
  const float r = x - n * 0.693359375f + n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  p = p * r * r + r + 1.0f;
  const std::int32_t e = (static_cast<std::int32_t>(n) + 127) << 23;
  return p * std::bit_cast<float>(e);
}

// In-place exp(s - column max) over a rows x cols block; records each
// column's max and sum.
void exp_columns(float* s, std::size_t rows, std::size_t cols, std::size_t ld, float* col_max,
                 float* col_sum) {
  std::fill_n(col_max, cols, -std::numeric_limits<float>::infinity());
  std::fill_n(col_sum, cols, 0.0f);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* row = s + r * ld;
    for (std::size_t c = 0; c < cols; ++c) col_max[c] = std::max(col_max[c], row[c]);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    float* row = s + r * ld;
    for (std::size_t c = 0; c < cols; ++c) row[c] = exp_approx(row[c] - col_max[c]);
    for (std::size_t c = 0; c < cols; ++c) col_sum[c] += row[c];
  }
}

struct Head {
  const float* q;
  const float* k;
  const float* v;
  std::size_t ld;  // row stride of q, k, v and out
  std::size_t d;
  std::size_t n;
};

void transpose(const float* src, std::size_t rows, std::size_t cols, std::size_t ld, float* dst) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) dst[j * rows + i] = src[i * ld + j];
  }
}

void full_head(const Head& h, float* out) {
  const std::size_t d = h.d, n = h.n;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  std::vector<float> kt(n * d);
  transpose(h.k, d, n, h.ld, kt.data());
  std::vector<float> qb(d * kQueryBlock), s(n * kQueryBlock), ob(d * kQueryBlock);
  std::vector<float> mx(kQueryBlock), sum(kQueryBlock);
  for (std::size_t j0 = 0; j0 < n; j0 += kQueryBlock) {
    const std::size_t b = std::min(kQueryBlock, n - j0);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t c = 0; c < b; ++c) qb[i * b + c] = h.q[i * h.ld + j0 + c] * scale;
    }
    sgemm(n, b, d, kt.data(), d, qb.data(), b, s.data(), b);
    exp_columns(s.data(), n, b, b, mx.data(), sum.data());
    sgemm(d, b, n, h.v, h.ld, s.data(), b, ob.data(), b);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t c = 0; c < b; ++c) out[i * h.ld + j0 + c] = ob[i * b + c] / sum[c];
    }
  }
}

void mita_head(const Head& h, const MitaConfig& cfg, float* out) {
  const std::size_t d = h.d, n = h.n, m = cfg.m;
  const std::size_t width = std::min(cfg.k, n);
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));

  // Landmarks by adaptive average pooling of the queries, d x m.
  std::vector<float> lm(d * m, 0.0f);
  for (std::size_t e = 0; e < m; ++e) {
    const std::size_t begin = e * n / m;
    const std::size_t end = ((e + 1) * n + m - 1) / m;
    const float inv = 1.0f / static_cast<float>(end - begin);
    for (std::size_t i = 0; i < d; ++i) {
      float acc = 0.0f;
      for (std::size_t j = begin; j < end; ++j) acc += h.q[i * h.ld + j];
      lm[i * m + e] = acc * inv;
    }
  }
  std::vector<float> kt(n * d);
  transpose(h.k, d, n, h.ld, kt.data());
  std::vector<float> lm_scaled(lm);
  for (float& x : lm_scaled) x *= scale;
  // Key-landmark scores, n x m.
  std::vector<float> scores(n * m);
  sgemm(n, m, d, kt.data(), d, lm_scaled.data(), m, scores.data(), m);

  // Query-landmark logits, m x n; routing takes the column argmax and the
  // shared expert their softmax.
  std::vector<float> lmt(m * d);
  transpose(lm_scaled.data(), d, m, m, lmt.data());
  std::vector<float> logits(m * n);
  sgemm(m, n, d, lmt.data(), d, h.q, h.ld, logits.data(), n);

  std::vector<float> shared_out, shared_max(n), shared_sum(n);
  if (cfg.shared_expert) {
    std::vector<float> probs(scores);
    std::vector<float> pm(m), ps(m);
    exp_columns(probs.data(), n, m, m, pm.data(), ps.data());
    std::vector<float> v_landmark(d * m);
    sgemm(d, m, n, h.v, h.ld, probs.data(), m, v_landmark.data(), m);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t e = 0; e < m; ++e) v_landmark[i * m + e] /= ps[e];
    }
    std::vector<float> weights(logits);
    exp_columns(weights.data(), m, n, n, shared_max.data(), shared_sum.data());
    shared_out.resize(d * n);
    sgemm(d, n, m, v_landmark.data(), m, weights.data(), n, shared_out.data(), n);
  }

  std::vector<float> routed_out, routed_max(n), routed_sum(n);
  if (cfg.routed_experts) {
    routed_out.assign(d * n, 0.0f);
    std::vector<std::size_t> assignment(n, 0), count(m + 1, 0);
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = 0;
      for (std::size_t e = 1; e < m; ++e) {
        if (logits[e * n + j] > logits[best * n + j]) best = e;
      }
      assignment[j] = best;
      ++count[best + 1];
    }
    std::partial_sum(count.begin(), count.end(), count.begin());
    std::vector<std::size_t> order(n), fill(count.begin(), count.end() - 1);
    for (std::size_t j = 0; j < n; ++j) order[fill[assignment[j]]++] = j;

    std::vector<float> column(n), sorted(n);
    std::vector<std::size_t> picked;
    std::vector<float> kg(width * d), vg(d * width), qg, s, og;
    std::vector<float> gm, gs;
    for (std::size_t e = 0; e < m; ++e) {
      const std::size_t members = count[e + 1] - count[e];
      if (members == 0) continue;
      // Top-`width` keys of landmark e by (score desc, index asc).
      for (std::size_t j = 0; j < n; ++j) column[j] = scores[j * m + e];
      picked.clear();
      if (width == n) {
        picked.resize(n);
        std::iota(picked.begin(), picked.end(), std::size_t{0});
      } else {
        sorted = column;
        std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(width - 1),
                         sorted.end(), std::greater<>());
        const float cut = sorted[width - 1];
        for (std::size_t j = 0; j < n; ++j) {
          if (column[j] > cut) picked.push_back(j);
        }
        for (std::size_t j = 0; j < n && picked.size() < width; ++j) {
          if (column[j] == cut) picked.push_back(j);
        }
      }
      for (std::size_t c = 0; c < width; ++c) {
        std::copy_n(kt.data() + picked[c] * d, d, kg.data() + c * d);
        for (std::size_t i = 0; i < d; ++i) vg[i * width + c] = h.v[i * h.ld + picked[c]];
      }
      qg.resize(d * members);
      const std::size_t* group = order.data() + count[e];
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t g = 0; g < members; ++g) qg[i * members + g] = h.q[i * h.ld + group[g]] * scale;
      }
      s.resize(width * members);
      sgemm(width, members, d, kg.data(), d, qg.data(), members, s.data(), members);
      gm.resize(members);
      gs.resize(members);
      exp_columns(s.data(), width, members, members, gm.data(), gs.data());
      og.resize(d * members);
      sgemm(d, members, width, vg.data(), width, s.data(), members, og.data(), members);
      for (std::size_t g = 0; g < members; ++g) {
        const std::size_t j = group[g];
        routed_max[j] = gm[g];
        routed_sum[j] = gs[g];
        for (std::size_t i = 0; i < d; ++i) routed_out[i * n + j] = og[i * members + g];
      }
    }
  }

  // Online-softmax merge of the unnormalized partial sums.
  std::vector<float> wa(n, 0.0f), wb(n, 0.0f), inv(n);
  for (std::size_t j = 0; j < n; ++j) {
    float top = -std::numeric_limits<float>::infinity();
    if (cfg.shared_expert) top = shared_max[j];
    if (cfg.routed_experts) top = std::max(top, routed_max[j]);
    if (cfg.shared_expert) wa[j] = std::exp(shared_max[j] - top);
    if (cfg.routed_experts) wb[j] = std::exp(routed_max[j] - top);
    const float den = (cfg.shared_expert ? wa[j] * shared_sum[j] : 0.0f) +
                      (cfg.routed_experts ? wb[j] * routed_sum[j] : 0.0f);
    inv[j] = 1.0f / den;
  }
  for (std::size_t i = 0; i < d; ++i) {
    float* row = out + i * h.ld;
    for (std::size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      if (cfg.shared_expert) acc += wa[j] * shared_out[i * n + j];
      if (cfg.routed_experts) acc += wb[j] * routed_out[i * n + j];
      row[j] = acc * inv[j];
    }
  }
}

void attend_head(Mechanism mech, const Head& h, const MitaConfig& cfg, float* out) {
  if (mech == Mechanism::kFull) {
    full_head(h, out);
  } else {
    mita_head(h, mech == Mechanism::kMita ? cfg : config_for(mech, cfg.m, cfg.k), out);
  }
}

struct FloatLayer {
  std::vector<float> wq, wk, wv, wo;  // D x D
  std::vector<float> w1, b1;          // 4D x D, 4D
  std::vector<float> w2, b2;          // D x 4D, D
};

struct FloatModel {
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::vector<FloatLayer> layers;
};

std::vector<float> random_floats(std::size_t count, double scale, Rng& rng) {
  std::vector<float> out(count);
  for (float& x : out) x = static_cast<float>(scale * rng.truncated_normal());
  return out;
}

FloatModel make_model(std::size_t dim, std::size_t heads, std::size_t layers, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0xbe4c);
  FloatModel model{dim, heads, {}};
  const double proj = 1.0 / std::sqrt(static_cast<double>(dim));
  const double down = 1.0 / std::sqrt(static_cast<double>(4 * dim));
  for (std::size_t l = 0; l < layers; ++l) {
    FloatLayer fl;
    fl.wq = random_floats(dim * dim, proj, rng);
    fl.wk = random_floats(dim * dim, proj, rng);
    fl.wv = random_floats(dim * dim, proj, rng);
    fl.wo = random_floats(dim * dim, proj, rng);
    fl.w1 = random_floats(4 * dim * dim, proj, rng);
    fl.b1 = random_floats(4 * dim, 0.1, rng);
    fl.w2 = random_floats(4 * dim * dim, down, rng);
    fl.b2 = random_floats(dim, 0.1, rng);
    model.layers.push_back(std::move(fl));
  }
  return model;
}

std::vector<float> make_input(std::size_t dim, std::size_t n, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, 0x1e70);
  return random_floats(dim * n, 1.0, rng);
}

void layer_norm_f(const float* x, std::size_t d, std::size_t n, float* y) {
  std::vector<float> mean(n, 0.0f), var(n, 0.0f);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) mean[j] += x[i * n + j];
  }
  for (float& mu : mean) mu /= static_cast<float>(d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const float c = x[i * n + j] - mean[j];
      var[j] += c * c;
    }
  }
  for (float& v : var) v = 1.0f / std::sqrt(v / static_cast<float>(d) + static_cast<float>(kLnEps));
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) y[i * n + j] = (x[i * n + j] - mean[j]) * var[j];
  }
}

// x: D x N residual stream, updated in place.
void forward_f(const FloatModel& model, Mechanism mech, const MitaConfig& cfg, std::vector<float>& x,
               std::size_t n) {
  const std::size_t dim = model.dim;
  const std::size_t dh = dim / model.heads;
  std::vector<float> h(dim * n), q(dim * n), k(dim * n), v(dim * n), a(dim * n), proj(dim * n);
  std::vector<float> hidden(4 * dim * n);
  for (const FloatLayer& l : model.layers) {
    layer_norm_f(x.data(), dim, n, h.data());
    sgemm(dim, n, dim, l.wq.data(), dim, h.data(), n, q.data(), n);
    sgemm(dim, n, dim, l.wk.data(), dim, h.data(), n, k.data(), n);
    sgemm(dim, n, dim, l.wv.data(), dim, h.data(), n, v.data(), n);
    for (std::size_t hd = 0; hd < model.heads; ++hd) {
      const std::size_t off = hd * dh * n;
      attend_head(mech, Head{q.data() + off, k.data() + off, v.data() + off, n, dh, n}, cfg,
                  a.data() + off);
    }
    sgemm(dim, n, dim, l.wo.data(), dim, a.data(), n, proj.data(), n);
    for (std::size_t i = 0; i < dim * n; ++i) x[i] += proj[i];
    layer_norm_f(x.data(), dim, n, h.data());
    sgemm(4 * dim, n, dim, l.w1.data(), dim, h.data(), n, hidden.data(), n);
    for (std::size_t r = 0; r < 4 * dim; ++r) {
      float* row = hidden.data() + r * n;
      for (std::size_t j = 0; j < n; ++j) row[j] = std::max(row[j] + l.b1[r], 0.0f);
    }
    sgemm(dim, n, 4 * dim, l.w2.data(), 4 * dim, hidden.data(), n, proj.data(), n);
    for (std::size_t r = 0; r < dim; ++r) {
      for (std::size_t j = 0; j < n; ++j) x[r * n + j] += proj[r * n + j] + l.b2[r];
    }
  }
}

Mat to_mat(const std::vector<float>& v, std::size_t rows, std::size_t cols) {
  return Mat(rows, cols, std::vector<double>(v.begin(), v.end()));
}

Mat layer_norm_d(const Mat& x) {
  Mat y(x.rows(), x.cols());
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) mean += x(i, j);
    mean /= static_cast<double>(x.rows());
    for (std::size_t i = 0; i < x.rows(); ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
    const double inv = 1.0 / std::sqrt(var / static_cast<double>(x.rows()) + kLnEps);
    for (std::size_t i = 0; i < x.rows(); ++i) y(i, j) = (x(i, j) - mean) * inv;
  }
  return y;
}

Mat forward_d(const FloatModel& model, Mechanism mech, const MitaConfig& cfg, Mat x) {
  const std::size_t dim = model.dim;
  const std::size_t n = x.cols();
  const std::size_t dh = dim / model.heads;
  for (const FloatLayer& l : model.layers) {
    const Mat h = layer_norm_d(x);
    const Mat q = matmul(to_mat(l.wq, dim, dim), h);
    const Mat k = matmul(to_mat(l.wk, dim, dim), h);
    const Mat v = matmul(to_mat(l.wv, dim, dim), h);
    Mat a(dim, n);
    for (std::size_t hd = 0; hd < model.heads; ++hd) {
      a.set_row_block(hd * dh, attention(mech, q.row_block(hd * dh, dh), k.row_block(hd * dh, dh),
                                         v.row_block(hd * dh, dh), cfg));
    }
    x += matmul(to_mat(l.wo, dim, dim), a);
    Mat hidden = matmul(to_mat(l.w1, 4 * dim, dim), layer_norm_d(x));
    for (std::size_t r = 0; r < 4 * dim; ++r) {
      for (std::size_t j = 0; j < n; ++j) hidden(r, j) = std::max(hidden(r, j) + l.b1[r], 0.0);
    }
    Mat mlp = matmul(to_mat(l.w2, dim, 4 * dim), hidden);
    for (std::size_t r = 0; r < dim; ++r) {
      for (std::size_t j = 0; j < n; ++j) mlp(r, j) += l.b2[r];
    }
    x += mlp;
  }
  return x;
}

void check_bench_args(Mechanism mech, std::size_t n, std::size_t dim, std::size_t heads,
                      const MitaConfig& cfg) {
  if (n < 1) throw std::invalid_argument("bench: sequence length must be >= 1");
  if (dim < 1 || heads < 1 || dim % heads != 0) {
    throw std::invalid_argument("bench: dim must be a positive multiple of heads");
  }
  if (mech != Mechanism::kFull) {
    cfg.validate();
    cfg.validate_for(n);
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::vector<float> fast_attention(Mechanism mech, const std::vector<float>& q,
                                  const std::vector<float>& k, const std::vector<float>& v,
                                  std::size_t d, std::size_t n, const MitaConfig& cfg) {
  if (q.size() != d * n || k.size() != d * n || v.size() != d * n) {
    throw std::invalid_argument("fast_attention: operands must be d x n");
  }
  check_bench_args(mech, n, d, 1, cfg);
  std::vector<float> out(d * n);
  attend_head(mech, Head{q.data(), k.data(), v.data(), n, d, n}, cfg, out.data());
  return out;
}

double bench_consistency(Mechanism mech, std::size_t n, std::size_t dim, std::size_t heads,
                         std::size_t layers, const MitaConfig& cfg, std::uint64_t seed) {
  check_bench_args(mech, n, dim, heads, cfg);
  const FloatModel model = make_model(dim, heads, layers, seed);
  std::vector<float> x = make_input(dim, n, seed);
  const Mat ref = forward_d(model, mech, cfg, to_mat(x, dim, n));
  forward_f(model, mech, cfg, x, n);
  return max_abs_diff(ref, to_mat(x, dim, n));
}

BenchRecord bench_attention(Mechanism mech, std::size_t n, std::size_t dim, std::size_t heads,
                            const MitaConfig& cfg, const BenchOptions& opts) {
  check_bench_args(mech, n, dim, heads, cfg);
  if (opts.reps < 3) throw std::invalid_argument("bench: need at least 3 timed reps");
  if (opts.warmup < 1) throw std::invalid_argument("bench: need at least 1 warmup run");
  if (opts.layers < 1) throw std::invalid_argument("bench: need at least one layer");

  BenchRecord rec;
  rec.mech = mech;
  rec.n = n;
  rec.dim = dim;
  rec.heads = heads;
  rec.cfg = mech == Mechanism::kFull ? MitaConfig{} : config_for(mech, cfg.m, cfg.k);
  rec.layers = opts.layers;
  rec.reps = opts.reps;
  rec.threads = thread_count();
  const std::size_t dh = dim / heads;
  rec.flops = flop_count(mech, n, dh, rec.cfg) * heads * opts.layers;
  // Q, K, V and output per head plus one read and one write of every
  // attention weight, in 4-byte floats.
  std::uint64_t weights = 0;
  if (mech == Mechanism::kFull) {
    weights = std::uint64_t{n} * n;
  } else {
    const std::uint64_t m = rec.cfg.m;
    weights = 2 * std::uint64_t{n} * m;  // key-landmark scores and routing logits
    if (rec.cfg.shared_expert) weights += std::uint64_t{n} * m;
    if (rec.cfg.routed_experts) weights += std::uint64_t{n} * std::min(rec.cfg.k, n) * rec.cfg.s;
  }
  rec.bytes_moved_estimate = 4 * (4 * std::uint64_t{n} * dh + 2 * weights) * heads * opts.layers;

  FloatModel model;
  std::vector<float> input;
  try {
    model = make_model(dim, heads, opts.layers, opts.seed);
    input = make_input(dim, n, opts.seed);
  } catch (const std::bad_alloc&) {
    throw std::runtime_error("bench: out of memory allocating N=" + std::to_string(n));
  }

  const auto run = [&](std::size_t batch) {
    const auto t0 = std::chrono::steady_clock::now();
    parallel_for(batch, [&](std::size_t) {
      std::vector<float> x(input);
      forward_f(model, mech, rec.cfg, x, n);
    });
    return seconds_since(t0);
  };

  // Grow the batch while throughput improves. These runs double as the
  // first warmup.
  std::size_t batch = 1;
  try {
    double best = static_cast<double>(n) / run(1);
    while (2 * batch * n <= opts.token_budget) {
      const double rate = static_cast<double>(2 * batch * n) / run(2 * batch);
      if (rate <= best) break;
      best = rate;
      batch *= 2;
    }
  } catch (const std::bad_alloc&) {
    if (batch == 1) throw std::runtime_error("bench: out of memory at batch 1, N=" + std::to_string(n));
  }
  rec.batch = batch;

  for (std::size_t w = 1; w < opts.warmup; ++w) run(batch);
  std::vector<double> times;
  for (std::size_t r = 0; r < opts.reps; ++r) times.push_back(run(batch));
  std::vector<double> sorted(times);
  std::sort(sorted.begin(), sorted.end());
  const std::size_t mid = sorted.size() / 2;
  rec.median_seconds = sorted.size() % 2 ? sorted[mid] : 0.5 * (sorted[mid - 1] + sorted[mid]);
  rec.tokens_per_second = static_cast<double>(batch * n) / rec.median_seconds;
  const double mean = std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
  double var = 0.0;
  for (double t : times) var += (t - mean) * (t - mean);
  rec.cv = std::sqrt(var / static_cast<double>(times.size())) / mean;
  return rec;
}

}  // namespace mita
