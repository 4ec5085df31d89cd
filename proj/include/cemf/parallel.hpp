#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cemf {

inline unsigned hardware_threads() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

/// Runs fn(i) for i in [begin, end) on contiguous chunks across n_threads.
/// Results must not depend on the partitioning: callers only write to
/// per-index slots. The first exception thrown in any worker is rethrown.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, unsigned n_threads, Fn&& fn) {
    if (end <= begin) return;
    std::size_t count = end - begin;
    if (n_threads == 0) n_threads = hardware_threads();
    if (n_threads <= 1 || count < 2) {
        for (std::size_t i = begin; i < end; ++i) fn(i);
        return;
    }
    if (n_threads > count) n_threads = static_cast<unsigned>(count);

    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> workers;
    workers.reserve(n_threads);
    std::size_t chunk = count / n_threads;
    std::size_t rem = count % n_threads;
    std::size_t lo = begin;
    for (unsigned t = 0; t < n_threads; ++t) {
        std::size_t hi = lo + chunk + (t < rem ? 1 : 0);
        workers.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
        lo = hi;
    }
    for (auto& w : workers) w.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace cemf
