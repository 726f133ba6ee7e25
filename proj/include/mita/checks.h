// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mita {

/// Randomized property and oracle suites run by `mita check`.
struct CheckOptions {
  std::uint64_t seed = 0;
  std::size_t instances = 100;
  /// Runs only suites whose name contains this substring.
  std::string filter;
};

struct CheckResult {
  std::string name;
  bool pass = false;
  /// Worst observed error or a short failure description.
  std::string detail;
  /// Largest observed error; 0 for exact suites.
  double worst = 0.0;
  double tolerance = 0.0;
};

std::vector<std::string> check_names();
std::vector<CheckResult> run_checks(const CheckOptions& opts);

}  // namespace mita
