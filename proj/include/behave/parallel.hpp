#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#include <omp.h>

#include "behave/types.hpp"

namespace behave {

/// Runs fn(i) for i in [0, n). The parallel path uses a static OpenMP
/// schedule; the first exception thrown by any iteration is rethrown here.
/// Iterations must write to disjoint outputs so both paths agree bitwise.
template <typename Fn>
void parallel_for(std::ptrdiff_t n, Exec exec, Fn&& fn) {
  if (exec == Exec::Serial || n < 2) {
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::mutex error_mutex;
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      fn(i);
    } catch (...) {
      std::lock_guard<std::mutex> lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

inline void set_thread_count(int threads) {
  if (threads > 0) omp_set_num_threads(threads);
}

}  // namespace behave
