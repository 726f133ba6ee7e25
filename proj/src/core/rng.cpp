// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#include "mita/rng.h"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace mita {

double Rng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  // Rejection sampling keeps the result unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double Rng::truncated_normal() {
  double x;
  do {
    x = normal();
  } while (x < -2.0 || x > 2.0);
  return x;
}

Rng Rng::derive(std::uint64_t seed, std::uint64_t tag) {
  // splitmix64 finalizer over the pair.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return Rng(z ^ (z >> 31));
}

Mat random_normal(std::size_t rows, std::size_t cols, Rng& rng, double scale) {
  Mat m(rows, cols);
  for (double& x : m.data()) x = scale * rng.normal();
  return m;
}

Mat random_uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
  Mat m(rows, cols);
  for (double& x : m.data()) x = rng.uniform(lo, hi);
  return m;
}

}  // namespace mita
