#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace glesens {

/// Worker cap for sample-parallel loops. threads == 1 runs inline and is the
/// reference for bitwise comparisons; every other value must match it.
struct ParallelOptions {
    unsigned threads = 1;
};

/// Runs body(i) for i in [0, n). Work is split into contiguous blocks; the
/// body must only write to slots owned by index i.
template <class Body>
void parallel_for(std::size_t n, ParallelOptions opts, Body&& body) {
    const std::size_t workers =
        std::min<std::size_t>(std::max(1u, opts.threads), std::max<std::size_t>(n, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = n * w / workers;
        const std::size_t end = n * (w + 1) / workers;
        pool.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) body(i);
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

}  // namespace glesens
