#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace seep {

// Process-wide worker cap. Default 1 (serial); the CLI raises it from
// --threads. All parallel loops in this library assign each index a disjoint
// output slot and keep any reduction in fixed index order, so results are
// bitwise identical for every thread count.
inline std::atomic<int>& max_threads_slot() {
    static std::atomic<int> n{1};
    return n;
}

inline void set_max_threads(int n) { max_threads_slot().store(n < 1 ? 1 : n); }
inline int max_threads() { return max_threads_slot().load(); }

namespace detail {
inline bool& in_parallel_region() {
    thread_local bool flag = false;
    return flag;
}
} // namespace detail

// Runs fn(i) for i in [0, n). Contiguous static chunking; nested calls run
// serially on the calling thread. The first exception thrown (lowest worker
// index) is rethrown after all workers join.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const int threads = max_threads();
    if (n == 0) return;
    if (threads <= 1 || n == 1 || detail::in_parallel_region()) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(threads, n);
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, w, &fn, &errors] {
            detail::in_parallel_region() = true;
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
            detail::in_parallel_region() = false;
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace seep
