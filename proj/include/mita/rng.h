// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

#include "mita/mat.h"

namespace mita {

/// Seedable generator with a platform-independent stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. Distribution sampling is done here rather than through the
/// <random> distribution classes, whose algorithms are implementation-defined:
/// uniforms take the top 53 bits, normals use Box-Muller.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n); n must be > 0.
  std::uint64_t below(std::uint64_t n);
  double normal();
  /// Normal truncated to [-2, 2] by resampling.
  double truncated_normal();

  /// Independent child stream; derivation is a fixed mix of seed and tag.
  static Rng derive(std::uint64_t seed, std::uint64_t tag);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// rows x cols matrix of N(0, scale^2) entries.
Mat random_normal(std::size_t rows, std::size_t cols, Rng& rng, double scale = 1.0);
/// rows x cols matrix of U[lo, hi) entries.
Mat random_uniform(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi);

}  // namespace mita
