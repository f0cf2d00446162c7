// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The oodkit Authors

#pragma once

#include <cstddef>
#include <functional>

namespace oodkit {

/// Worker count from OODKIT_THREADS (0 or unset = hardware concurrency).
std::size_t thread_count();

/// Runs body(i) for i in [0, n). Each index is processed exactly once, so
/// callers that write only to slot i get results independent of the thread
/// count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace oodkit
