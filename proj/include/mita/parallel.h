// Copyright 2026 The MiTA Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace mita {

/// Process-wide worker count used by parallel_for. Defaults to the
/// MITA_THREADS environment variable when set, else 1.
int thread_count();
void set_thread_count(int n);

/// Runs body(i) for i in [0, n) over thread_count() workers with a static
/// contiguous partition. Bodies must write disjoint outputs; callers that
/// reduce do so afterwards in index order, which keeps results identical for
/// every thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace mita
