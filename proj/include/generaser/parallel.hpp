#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace generaser {

inline int default_threads() {
    static int n = [] {
        if (const char* env = std::getenv("GENERASER_THREADS")) {
            const int v = std::atoi(env);
            if (v > 0) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return n;
}

// Static-chunked parallel loop. Each index is processed exactly once and
// writes to disjoint state, so results do not depend on the thread count.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads = 0) {
    if (threads <= 0) threads = default_threads();
    if (threads == 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace generaser
