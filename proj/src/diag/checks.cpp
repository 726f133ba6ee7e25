// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "mita/checks.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <tuple>

#include "mita/grad.h"
#include "mita/mita.h"
#include "mita/ops.h"
#include "mita/reference.h"
#include "mita/rng.h"

namespace mita {

namespace {

struct Operands {
  Mat q, k, v;
};

Operands draw(Rng& rng, std::size_t d, std::size_t n) {
  Operands o;
  o.q = random_normal(d, n, rng);
  o.k = random_normal(d, n, rng);
  o.v = random_normal(d, n, rng);
  return o;
}

Mat permute_cols(const Mat& x, const IndexList& perm) {
  Mat out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = x(i, perm[j]);
  }
  return out;
}

IndexList shuffled(Rng& rng, std::size_t n) {
  IndexList p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

std::string format(double x) {
  std::ostringstream s;
  s.precision(3);
  s << x;
  return s.str();
}

// Worst error against a tolerance.
CheckResult bounded(std::string name, double worst, double tol) {
  CheckResult r;
  r.name = std::move(name);
  r.worst = worst;
  r.tolerance = tol;
  r.pass = worst < tol;
  r.detail = "max err " + format(worst) + " (tol " + format(tol) + ")";
  return r;
}

CheckResult exact(std::string name, std::size_t failures, std::size_t cases) {
  CheckResult r;
  r.name = std::move(name);
  r.pass = failures == 0;
  r.worst = static_cast<double>(failures);
  r.detail = std::to_string(cases - failures) + "/" + std::to_string(cases) + " cases";
  return r;
}

CheckResult softmax_column_sums(const CheckOptions& o) {
  Rng rng = Rng::derive(o.seed, 1);
  double worst = 0.0;
  for (std::size_t t = 0; t < o.instances; ++t) {
    const Mat s = random_normal(1 + rng.below(64), 1 + rng.below(16), rng, 1 + 20 * rng.uniform());
    const Mat p = softmax_cols(s);
    for (std::size_t j = 0; j < p.cols(); ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < p.rows(); ++i) sum += p(i, j);
      worst = std::max(worst, std::abs(sum - 1.0));
    }
  }
  return bounded("softmax.column_sums", worst, 1e-12);
}

CheckResult softmax_large_logits(const CheckOptions& o) {
  Rng rng = Rng::derive(o.seed, 2);
  std::size_t bad = 0;
  for (std::size_t t = 0; t < o.instances; ++t) {
    Mat s = random_normal(8, 4, rng, 1e3);
    s(0, 0) = 700.0;
    s(1, 0) = -700.0;
    if (!softmax_cols(s).all_finite()) ++bad;
  }
  return exact("softmax.large_logits_finite", bad, o.instances);
}

// All length <= 8 vectors over {0, 1, 2}, every k, against a stable full sort.
CheckResult topk_oracle(const CheckOptions&) {
  std::size_t cases = 0, bad = 0;
  std::vector<double> scores;
  for (std::size_t len = 1; len <= 8; ++len) {
    std::size_t total = 1;
    for (std::size_t i = 0; i < len; ++i) total *= 3;
    scores.assign(len, 0.0);
    for (std::size_t code = 0; code < total; ++code) {
      std::size_t c = code;
      for (std::size_t i = 0; i < len; ++i, c /= 3) scores[i] = static_cast<double>(c % 3);
      IndexList order(len);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
      for (std::size_t k = 1; k <= len; ++k) {
        ++cases;
        const IndexList got = top_k_indices(scores, k);
        if (!std::equal(got.begin(), got.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k)) ||
            got.size() != k) {
          ++bad;
        }
      }
    }
  }
  return exact("topk.full_sort_oracle", bad, cases);
}

CheckResult fast_weight_equivalence(const CheckOptions& o) {
  Rng rng = Rng::derive(o.seed, 3);
  double worst = 0.0;
  for (std::size_t t = 0; t < o.instances; ++t) {
    const Operands x = draw(rng, 1 + rng.below(16), 1 + rng.below(64));
    worst = std::max(worst, max_abs_diff(fast_weight_mlp(x.q, x.k, x.v), full_attention(x.q, x.k, x.v)));
  }
  return bounded("fast_weight.equivalence", worst, 1e-12);
}

CheckResult route_only_full_width(const CheckOptions& o) {
  Rng rng = Rng::derive(o.seed, 4);
  double worst = 0.0;
  for (std::size_t t = 0; t < o.instances; ++t) {
    const std::size_t n = 1 + rng.below(128);
    const Operands x = draw(rng, 1 + rng.below(16), n);
    const std::size_t m = 1 + rng.below(std::min<std::size_t>(n, 16));
    worst = std::max(worst, max_abs_diff(route_only_attention(x.q, x.k, x.v, m, n),
                                         full_attention(x.q, x.k, x.v)));
  }
  return bounded("route_only.full_width_equals_full", worst, 1e-10);
}

CheckResult combine_concat(const CheckOptions& o) {
  Rng rng = Rng::derive(o.seed, 5);
  double worst = 0.0;
  for (std::size_t t = 0; t < o.instances; ++t) {
    const std::size_t n = 1 + rng.below(64);
    const Operands x = draw(rng, 1 + rng.below(16), n);
    const MitaConfig cfg = MitaConfig::full(1 + rng.below(n), 1 + rng.below(n));
    worst = std::max(worst, max_abs_diff(mita_attention(x.q, x.k, x.v, cfg),
                                         mita_concat_attention(x.q, x.k, x.v, cfg)));
  }
  return bounded("combine.online_softmax_equals_concat", worst, 1e-12);
}

CheckResult cardinality(const CheckOptions& o) {
  Rng rng = Rng::derive(o.seed, 6);
  std::size_t bad = 0, cases = 0;
  for (const auto& [n, mk, expect] :
       {std::tuple<std::size_t, std::size_t, std::size_t>{200, 25, 50}, {1024, 256, 512}}) {
    const Operands x = draw(rng, 4, n);
    const MitaTrace tr = mita_forward(x.q, x.k, x.v, MitaConfig::full(mk, mk));
    for (std::size_t c : tr.attended_count) {
      ++cases;
      if (c != expect) ++bad;
    }
  }
  return exact("cardinality.attended_m_plus_ks", bad, cases);
}

CheckResult permutation_full(const CheckOptions& o) {
  Rng rng = Rng::derive(o.seed, 7);
  double worst = 0.0;
  for (std::size_t t = 0; t < o.instances; ++t) {
    const std::size_t n = 1 + rng.below(64);
    const Operands x = draw(rng, 1 + rng.below(16), n);
    const IndexList p = shuffled(rng, n);
    worst = std::max(worst, max_abs_diff(full_attention(x.q, permute_cols(x.k, p), permute_cols(x.v, p)),
                                         full_attention(x.q, x.k, x.v)));
  }
  return bounded("permutation.full_attention", worst, 1e-10);
}

CheckResult permutation_landmarks(const CheckOptions& o) {
  Rng rng = Rng::derive(o.seed, 8);
  double worst = 0.0;
  for (std::size_t t = 0; t < o.instances; ++t) {
    const std::size_t n = 1 + rng.below(64);
    const Operands x = draw(rng, 1 + rng.below(16), n);
    const std::size_t m = 1 + rng.below(n);
    const IndexList p = shuffled(rng, n);
    const LandmarkState a = build_landmarks(x.q, x.k, x.v, m);
    const LandmarkState b = build_landmarks(x.q, permute_cols(x.k, p), permute_cols(x.v, p), m);
    worst = std::max(worst, max_abs_diff(a.v_landmark, b.v_landmark));
  }
  return bounded("permutation.landmark_values", worst, 1e-10);
}

CheckResult flop_linearity(const CheckOptions&) {
  const MitaConfig cfg = MitaConfig::full(256, 256);
  double worst = 0.0;
  std::size_t bad = 0, cases = 0;
  for (std::size_t n = 4096; n <= (std::size_t{1} << 20); n *= 2) {
    const double r = static_cast<double>(flop_count(Mechanism::kMita, 2 * n, 64, cfg)) /
                     static_cast<double>(flop_count(Mechanism::kMita, n, 64, cfg));
    worst = std::max(worst, std::abs(r - 2.0));
    ++cases;
    if (flop_count(Mechanism::kFull, 2 * n, 64, cfg) != 4 * flop_count(Mechanism::kFull, n, 64, cfg)) ++bad;
  }
  CheckResult r = bounded("flops.linear_vs_quadratic", worst, 0.1);
  r.pass = r.pass && bad == 0;
  if (bad) r.detail += ", full ratio not 4 in " + std::to_string(bad) + " cases";
  return r;
}

CheckResult grad_suite(const CheckOptions& o, Mechanism mech, const char* name) {
  double worst = 0.0;
  std::size_t ties = 0;
  const std::size_t seeds = std::min<std::size_t>(o.instances, 50);
  for (std::size_t s = 0; s < seeds; ++s) {
    const GradCheckReport r =
        grad_check(mech, GradCheckDims{4, 16}, MitaConfig::full(4, 3), o.seed * 1000 + s, 1e-5);
    if (r.tie_detected) ++ties;
    worst = std::max(worst, r.max_rel_err);
  }
  CheckResult r = bounded(name, worst, 1e-5);
  if (ties) r.detail += ", " + std::to_string(ties) + " tied draws skipped";
  return r;
}

struct Suite {
  const char* name;
  std::function<CheckResult(const CheckOptions&)> run;
};

const std::vector<Suite>& suites() {
  static const std::vector<Suite> all = {
      {"softmax.column_sums", softmax_column_sums},
      {"softmax.large_logits_finite", softmax_large_logits},
      {"topk.full_sort_oracle", topk_oracle},
      {"fast_weight.equivalence", fast_weight_equivalence},
      {"route_only.full_width_equals_full", route_only_full_width},
      {"combine.online_softmax_equals_concat", combine_concat},
      {"cardinality.attended_m_plus_ks", cardinality},
      {"permutation.full_attention", permutation_full},
      {"permutation.landmark_values", permutation_landmarks},
      {"flops.linear_vs_quadratic", flop_linearity},
      {"grad.full_attention", [](const CheckOptions& o) {
         return grad_suite(o, Mechanism::kFull, "grad.full_attention");
       }},
      {"grad.mita", [](const CheckOptions& o) { return grad_suite(o, Mechanism::kMita, "grad.mita"); }},
  };
  return all;
}

}  // namespace

std::vector<std::string> check_names() {
  std::vector<std::string> out;
  for (const Suite& s : suites()) out.emplace_back(s.name);
  return out;
}

std::vector<CheckResult> run_checks(const CheckOptions& opts) {
  std::vector<CheckResult> out;
  for (const Suite& s : suites()) {
    if (!opts.filter.empty() && std::string(s.name).find(opts.filter) == std::string::npos) continue;
    try {
      out.push_back(s.run(opts));
    } catch (const std::exception& e) {
      out.push_back(CheckResult{s.name, false, std::string("threw: ") + e.what(), 0.0, 0.0});
    }
  }
  return out;
}

}  // namespace mita
