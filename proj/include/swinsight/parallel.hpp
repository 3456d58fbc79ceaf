#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace swinsight {

/// Worker cap for op kernels. SWINSIGHT_THREADS overrides the hardware count.
inline std::size_t thread_cap() {
    static const std::size_t cap = [] {
        if (const char* env = std::getenv("SWINSIGHT_THREADS")) {
            try {
                const long v = std::stol(env);
                if (v >= 1) return static_cast<std::size_t>(v);
            } catch (...) {
            }
        }
        return std::max<std::size_t>(1, std::thread::hardware_concurrency());
    }();
    return cap;
}

/// Runs body(begin, end) over [0, n) in contiguous chunks. Each index is owned
/// by exactly one chunk, so results do not depend on the thread count as long
/// as body writes only to its own indices.
template <typename Body>
void parallel_for(std::size_t n, std::size_t min_chunk, Body&& body) {
    const std::size_t workers = std::min(thread_cap(), min_chunk == 0 ? n : n / std::max<std::size_t>(min_chunk, 1));
    if (workers <= 1 || n < 2) {
        body(std::size_t{0}, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t b = w * chunk;
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&body, b, e] { body(b, e); });
    }
    body(std::size_t{0}, std::min(n, chunk));
    for (auto& t : pool) t.join();
}

}  // namespace swinsight
