#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace gshider {

/// Runs fn(chunk) for chunk = 0..num_chunks-1 on up to `threads` workers.
///
/// Chunk granularity is caller-defined and independent of the worker count,
/// so any reduction that merges per-chunk partials in chunk order is
/// bit-identical for every thread count.
inline void parallel_chunks(std::size_t num_chunks, int threads,
                            const std::function<void(std::size_t)>& fn) {
    if (num_chunks == 0) return;
    std::size_t workers = threads < 1 ? 1 : static_cast<std::size_t>(threads);
    if (workers > num_chunks) workers = num_chunks;
    if (workers == 1) {
        for (std::size_t i = 0; i < num_chunks; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    auto body = [&] {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= num_chunks || failed.load()) return;
            try {
                fn(i);
            } catch (...) {
                if (!failed.exchange(true)) error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace gshider
