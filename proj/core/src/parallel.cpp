// SPDX-License-Identifier: Apache-2.0

#include "skald/parallel.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace skald {

namespace {
std::atomic<int> g_max_jobs{0};
}

void set_max_jobs(int jobs) { g_max_jobs.store(jobs < 0 ? 0 : jobs); }

int max_jobs() {
  int j = g_max_jobs.load();
  if (j > 0) return j;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : int(hc);
}

void parallel_for(int n, const std::function<void(int)> &fn) {
  if (n <= 0) return;
  int workers = std::min(n, max_jobs());
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex err_mu;

  auto body = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
        next.store(n); // stop handing out work
        return;
      }
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(size_t(workers) - 1);
  for (int t = 1; t < workers; ++t) threads.emplace_back(body);
  body();
  for (auto &t : threads) t.join();
  if (err) std::rethrow_exception(err);
}

} // namespace skald
