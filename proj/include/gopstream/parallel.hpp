#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace gopstream {

/// Worker cap: GOPSTREAM_THREADS if set and positive, else the hardware count.
inline std::size_t thread_count() {
    if (const char* env = std::getenv("GOPSTREAM_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

namespace parallel_detail {
inline thread_local bool in_worker = false;
}

/// Runs fn(i) for i in [0, n) on up to thread_count() threads with a static
/// contiguous partition. Nested calls from a worker run serially. The first
/// exception thrown is rethrown.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t max_threads = 0) {
    const std::size_t workers =
        parallel_detail::in_worker ? 1 : std::min(n, max_threads ? max_threads : thread_count());
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            parallel_detail::in_worker = true;
            const std::size_t lo = n * w / workers, hi = n * (w + 1) / workers;
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace gopstream
