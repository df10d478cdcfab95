// SPDX-License-Identifier: Apache-2.0
/**
 * @file   parallel.hpp
 * @brief  Deterministic work distribution over a bounded thread count.
 *
 * parallel_for distributes indices to worker threads; each index writes only
 * its own output slot, so results never depend on scheduling. Reductions are
 * expressed as a map over fixed-size blocks followed by an ordered combine,
 * which keeps floating-point results identical for any worker count.
 */

#ifndef SKALD_PARALLEL_HPP
#define SKALD_PARALLEL_HPP

#include <functional>

namespace skald {

/// Global worker cap (CLI --jobs). 0 means "use hardware concurrency".
void set_max_jobs(int jobs);
int max_jobs();

/// Runs fn(i) for i in [0, n). Exceptions are rethrown on the caller thread.
void parallel_for(int n, const std::function<void(int)> &fn);

/// Number of fixed-size blocks covering n items.
inline int block_count(int n, int block) { return (n + block - 1) / block; }

} // namespace skald

#endif // SKALD_PARALLEL_HPP
