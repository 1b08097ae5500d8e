// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace deltaforge {

// Worker cap for parallel sections. Defaults to 1; the CLI sizes it from
// --threads or DELTAFORGE_THREADS. Results are required to be bitwise
// independent of this value: parallel_for only ever computes independent
// slots, and all reductions happen afterwards in fixed index order.
size_t worker_count();
void set_worker_count(size_t n);

// Runs fn(0..n-1), each index exactly once, on up to worker_count() threads.
// fn must only write to state owned by its index. Exceptions are rethrown
// on the calling thread after all workers join.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace deltaforge
