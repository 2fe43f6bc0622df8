#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace tab2img {

// Runs fn(index, slot) for index in [0, n) on up to `threads` workers; slot
// identifies the worker so callers can hand each one its own scratch space.
// Results must not depend on how indices map to slots.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t, int)>& fn) {
    const int used = std::max(1, std::min<int>(threads, static_cast<int>(n)));
    if (used == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i, 0);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(used);
    for (int t = 0; t < used; ++t) {
        pool.emplace_back([&fn, t, used, n] {
            for (std::size_t i = static_cast<std::size_t>(t); i < n; i += used) fn(i, t);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace tab2img
