#ifndef BCDIFF_CORE_HPP
#define BCDIFF_CORE_HPP

#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bcdiff {

// Library-wide error type. Contract violations (bad shapes, bad configs,
// non-finite states) throw this rather than asserting, so the CLI can turn
// them into diagnostics and a nonzero exit code.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) {
    throw Error(msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

template <typename T>
std::string str(const T& v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

inline unsigned worker_count() {
    unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : n;
}

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks, one per
// worker. Each index must only write state owned by that index; reductions
// over i happen after the join, in index order, so results do not depend on
// the number of workers.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn) {
    if (n <= 0) return;
    const std::int64_t workers =
        std::min<std::int64_t>(static_cast<std::int64_t>(worker_count()), n);
    if (workers <= 1) {
        for (std::int64_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    const std::int64_t chunk = (n + workers - 1) / workers;
    for (std::int64_t w = 0; w < workers; ++w) {
        const std::int64_t lo = w * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace bcdiff

#endif  // BCDIFF_CORE_HPP
