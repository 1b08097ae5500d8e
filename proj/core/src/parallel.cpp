// SPDX-License-Identifier: Apache-2.0
#include "deltaforge/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace deltaforge {

namespace {

size_t initial_worker_count() {
  if (const char* env = std::getenv("DELTAFORGE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<size_t>(v);
  }
  return 1;
}

std::atomic<size_t>& worker_slot() {
  static std::atomic<size_t> count{initial_worker_count()};
  return count;
}

}  // namespace

size_t worker_count() { return worker_slot().load(std::memory_order_relaxed); }

void set_worker_count(size_t n) {
  worker_slot().store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  const size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto body = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (size_t w = 1; w < workers; ++w) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();

  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace deltaforge
