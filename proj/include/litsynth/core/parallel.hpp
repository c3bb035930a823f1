#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <optional>
#include <thread>
#include <type_traits>
#include <vector>

namespace litsynth {

/// Applies `fn` to every item on at most `width` worker threads. Results keep
/// input order. The exception of the lowest-indexed failing item is rethrown
/// after all workers finish.
template <class In, class Fn>
auto parallel_map(const std::vector<In>& items, std::size_t width, Fn fn)
    -> std::vector<std::invoke_result_t<Fn&, const In&>> {
    using Out = std::invoke_result_t<Fn&, const In&>;
    std::vector<std::optional<Out>> slots(items.size());
    std::vector<std::exception_ptr> errors(items.size());
    std::atomic<std::size_t> next{0};

    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < items.size(); i = next.fetch_add(1)) {
            try {
                slots[i].emplace(fn(items[i]));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };

    const std::size_t n_threads = std::min(std::max<std::size_t>(width, 1), items.size());
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    }

    for (auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<Out> out;
    out.reserve(items.size());
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

}  // namespace litsynth
