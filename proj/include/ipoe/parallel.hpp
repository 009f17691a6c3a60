#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ipoe {

// Bounded-parallelism map with index-stable results. The output order never
// depends on scheduling, so callers stay deterministic.
template <typename T, typename Fn>
auto parallel_map(const std::vector<T>& items, Fn fn, int threads)
    -> std::vector<decltype(fn(items[0]))> {
    using R = decltype(fn(items[0]));
    std::vector<R> results(items.size());
    if (items.empty()) return results;

    if (threads <= 1 || items.size() == 1) {
        for (size_t i = 0; i < items.size(); ++i) results[i] = fn(items[i]);
        return results;
    }

    const size_t worker_count =
        std::min<size_t>(static_cast<size_t>(threads), items.size());
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= items.size()) return;
            try {
                results[i] = fn(items[i]);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> pool;
    pool.reserve(worker_count);
    for (size_t t = 0; t < worker_count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
    return results;
}

}  // namespace ipoe
