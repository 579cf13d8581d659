#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace ctxnav {

// Runs fn(i) for i in [0, n) on at most `workers` threads. The first
// exception (lowest index) is rethrown after every task has finished.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
    if (n == 0) return;
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    auto threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (threads == 1) {
        run();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(threads);
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(run);
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

}  // namespace ctxnav
