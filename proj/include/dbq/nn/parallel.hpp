// Copyright 2026 The DBQ Toolkit Authors
// SPDX-License-Identifier: Apache-2.0

// Sample-level parallelism. Work items are independent and write to disjoint
// outputs, so results never depend on the thread count.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace dbq::nn {

/// Worker cap from DBQ_THREADS; 1 when unset or invalid.
inline std::size_t thread_count()
{
    static const std::size_t n = [] {
        const char* v = std::getenv("DBQ_THREADS");
        if (!v) return std::size_t{1};
        char* end = nullptr;
        const long x = std::strtol(v, &end, 10);
        if (end == v || *end != '\0' || x < 1) return std::size_t{1};
        return static_cast<std::size_t>(std::min<long>(x, 256));
    }();
    return n;
}

/// Calls fn(i) for i in [0, n), split into contiguous chunks across threads.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn)
{
    const std::size_t workers = std::min(thread_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
            try {
                const std::size_t lo = t * chunk, hi = std::min(n, lo + chunk);
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

} // namespace dbq::nn
