// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace modelab {

/// Worker cap. Defaults to MODELAB_THREADS when set, else hardware concurrency.
std::size_t num_threads();
void set_num_threads(std::size_t n);

/// Runs fn(i) for i in [0, n). Work items must write disjoint outputs; the
/// caller reduces any partial results in index order, so results do not
/// depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace modelab
