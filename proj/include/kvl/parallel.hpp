#pragma once

#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace kvl {

// Static interleaved parallel loop. `fn(i)` must only touch state owned by
// index i, so results are identical to the sequential run for any thread
// count. The first exception thrown (lowest worker id) is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t t = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
    std::vector<std::exception_ptr> errs(t);
    std::vector<std::thread> pool;
    pool.reserve(t);
    for (std::size_t w = 0; w < t; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += t) fn(i);
            } catch (...) {
                errs[w] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errs) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace kvl
