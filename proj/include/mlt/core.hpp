#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace mlt {

inline constexpr const char* version_string = "1.0.0";

/// Raised when an input violates a documented invariant or schema.
/// The CLI maps this to exit code 2.
struct invariant_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Raised when a numerical procedure fails (divergence, overflow,
/// non-convergence). The CLI maps this to exit code 3.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Non-fatal diagnostics (clipped weights, unstable operators, skipped
/// groups) are routed through a process-wide handler so library code
/// never writes to stderr directly.
using warning_handler = std::function<void(const std::string&)>;

namespace detail {
inline warning_handler& warning_sink() {
    static warning_handler h;  // empty: discard
    return h;
}
}  // namespace detail

inline void set_warning_handler(warning_handler h) { detail::warning_sink() = std::move(h); }

inline void warn(const std::string& msg) {
    if (detail::warning_sink()) detail::warning_sink()(msg);
}

/// Resolves a thread-count request: 0 means "auto" (hardware concurrency).
inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs fn(i) for i in [0, n). Work items must be independent; callers
/// that reduce results must store per-index outputs and combine them in
/// fixed index order afterwards, so the result is identical for any
/// thread count.
template <typename Fn>
void parallel_for(std::int64_t n, int threads, Fn&& fn) {
    threads = resolve_threads(threads);
    if (threads <= 1 || n <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::int64_t chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        std::int64_t lo = t * chunk;
        std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace mlt
