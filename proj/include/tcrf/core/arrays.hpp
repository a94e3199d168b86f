#pragma once

#include <algorithm>
#include <atomic>
#include <complex>
#include <cstddef>
#include <cstdlib>
#include <limits>
#include <new>
#include <thread>
#include <vector>

namespace tcrf {

using cplx = std::complex<double>;

/// Allocator returning 64-byte aligned storage. FFTW plans are created on
/// aligned scratch buffers and executed on user arrays, so every grid array
/// must share that alignment.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t count) {
    if (count == 0) return nullptr;
    if (count > std::numeric_limits<std::size_t>::max() / sizeof(T)) throw std::bad_array_new_length();
    return static_cast<T*>(::operator new(count * sizeof(T), std::align_val_t{alignment}));
  }
  void deallocate(T* ptr, std::size_t) noexcept { ::operator delete(ptr, std::align_val_t{alignment}); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
  template <class U>
  bool operator!=(const AlignedAllocator<U>&) const noexcept { return false; }
};

using RealArray = std::vector<double, AlignedAllocator<double>>;
using ComplexArray = std::vector<cplx, AlignedAllocator<cplx>>;

namespace detail {
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> threads{1};
  return threads;
}
}  // namespace detail

/// Number of worker threads used by grid-pointwise kernels.
inline int thread_count() { return detail::thread_setting().load(); }
inline void set_thread_count(int threads) { detail::thread_setting().store(std::max(1, threads)); }

/// Runs `body(lo, hi)` over a static partition of [0, count). Only used for
/// pointwise kernels whose result is independent of the partition; reductions
/// stay sequential so results never depend on the thread count.
template <class Body>
void parallel_for(std::size_t count, Body&& body) {
  const int threads = thread_count();
  constexpr std::size_t min_chunk = 1 << 14;
  if (threads <= 1 || count < 2 * min_chunk) {
    body(std::size_t{0}, count);
    return;
  }
  const std::size_t parts = std::min<std::size_t>(threads, count / min_chunk);
  const std::size_t chunk = (count + parts - 1) / parts;
  std::vector<std::thread> pool;
  pool.reserve(parts - 1);
  for (std::size_t p = 1; p < parts; ++p) {
    const std::size_t lo = p * chunk;
    const std::size_t hi = std::min(count, lo + chunk);
    if (lo < hi) pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  body(std::size_t{0}, std::min(count, chunk));
  for (auto& worker : pool) worker.join();
}

}  // namespace tcrf
