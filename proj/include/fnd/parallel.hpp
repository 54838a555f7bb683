#pragma once

// Kernels that are data-parallel come in two flavours: a plain serial loop,
// kept as the reference, and an OpenMP loop. Both produce bit-identical
// results because every output element is reduced in the same order by a
// single thread; tests compare them exactly.

#include <cstddef>
#include <cstdint>
#include <exception>
#include <vector>

namespace fnd {

enum class Exec { kSerial, kParallel };

int max_threads();

/// Runs body(i) for i in [0, n). Under kParallel the iterations are spread
/// over OpenMP threads; the first exception by index is rethrown after the
/// loop.
template <typename Body>
void parallel_for(std::size_t n, Exec exec, Body&& body) {
  if (exec == Exec::kSerial || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 4)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      body(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace fnd
