#pragma once

#include <cstdint>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

// Execution-policy switch for the hot kernels. Every parallel kernel in this
// library is written so that Serial and Parallel produce bit-identical
// results: work items are independent (per-item derived RNG streams, per-item
// output slots) and reductions happen afterwards in a fixed serial order.

namespace jinfer {

enum class Exec { Serial, Parallel };

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

inline void set_max_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

namespace detail {

// Exceptions must not unwind out of an OpenMP region; capture the first one
// and rethrow after the join.
class ExceptionCollector {
 public:
  template <class F>
  void run(F&& f) noexcept {
    try {
      f();
    } catch (...) {
      std::lock_guard<std::mutex> lock(mutex_);
      if (!first_) first_ = std::current_exception();
    }
  }
  bool failed() const { return first_ != nullptr; }
  void rethrow_if_failed() {
    if (first_) std::rethrow_exception(first_);
  }

 private:
  std::mutex mutex_;
  std::exception_ptr first_;
};

}  // namespace detail

// parallel_for(n, exec, body): body(i) for i in [0, n).
template <class Body>
void parallel_for(std::int64_t n, Exec exec, Body&& body) {
#ifdef _OPENMP
  if (exec == Exec::Parallel && n > 1) {
    detail::ExceptionCollector errors;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      errors.run([&] { body(i); });
    }
    errors.rethrow_if_failed();
    return;
  }
#endif
  (void)exec;
  for (std::int64_t i = 0; i < n; ++i) body(i);
}

// Same, but each thread gets one scratch object from make(): body(scratch, i).
// Scratch must not carry state across items that affects results (buffers only).
template <class Make, class Body>
void parallel_for_scratch(std::int64_t n, Exec exec, Make&& make, Body&& body) {
#ifdef _OPENMP
  if (exec == Exec::Parallel && n > 1) {
    detail::ExceptionCollector errors;
#pragma omp parallel
    {
      auto scratch = make();
#pragma omp for schedule(static)
      for (std::int64_t i = 0; i < n; ++i) {
        errors.run([&] { body(scratch, i); });
      }
    }
    errors.rethrow_if_failed();
    return;
  }
#endif
  (void)exec;
  auto scratch = make();
  for (std::int64_t i = 0; i < n; ++i) body(scratch, i);
}

}  // namespace jinfer
