#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rtnsim {

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) {
    return requested;
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

//! Runs body(i) for every i in [0, n) on up to `threads` workers (0 = all
//! cores). Work items are claimed dynamically, so body must write only to
//! slot i of any shared output. The exception of the lowest failing index is
//! rethrown after all workers finish.
template <class Body>
void parallel_for(std::size_t n, unsigned threads, Body&& body) {
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(resolve_threads(threads), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      body(i);
    }
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::size_t error_index = n;
  auto run = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (i < error_index) {
          error_index = i;
          error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) {
    pool.emplace_back(run);
  }
  run();
  pool.clear();
  if (error) {
    std::rethrow_exception(error);
  }
}

//! Reduces items[0..n) with a fixed binary tree so the rounding pattern
//! depends only on n, never on how items were produced.
template <class T, class Combine>
T pairwise_reduce(std::vector<T> items, Combine&& combine) {
  if (items.empty()) {
    return T{};
  }
  std::size_t count = items.size();
  while (count > 1) {
    const std::size_t half = count / 2;
    for (std::size_t i = 0; i < half; ++i) {
      combine(items[2 * i], items[2 * i + 1]);
      if (i != 2 * i) {
        items[i] = std::move(items[2 * i]);
      }
    }
    if (count % 2 == 1) {
      items[half] = std::move(items[count - 1]);
    }
    count = half + count % 2;
  }
  return std::move(items[0]);
}

inline double pairwise_sum(const double* values, std::size_t n) {
  if (n <= 8) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += values[i];
    }
    return acc;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(values, half) + pairwise_sum(values + half, n - half);
}

}  // namespace rtnsim
