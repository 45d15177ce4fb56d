#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace olbp {

// Worker count for per-sample stages: hardware concurrency, capped by the
// OLBP_THREADS environment variable.
inline std::size_t worker_count(std::size_t jobs) {
    std::size_t n = std::thread::hardware_concurrency();
    if (n == 0) n = 1;
    if (const char* env = std::getenv("OLBP_THREADS")) {
        const long cap = std::strtol(env, nullptr, 10);
        if (cap >= 1 && std::size_t(cap) < n) n = std::size_t(cap);
    }
    return std::min(n, jobs == 0 ? std::size_t(1) : jobs);
}

// Runs fn(i) for i in [0, n) on a static interleaved partition. Each index is
// processed by exactly one worker, so writes into index-addressed slots give
// deterministic results regardless of the worker count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = worker_count(n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr error;
    std::mutex error_mu;
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            try {
                for (std::size_t i = t; i < n; i += workers) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace olbp
