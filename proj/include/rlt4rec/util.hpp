#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace rlt4rec {

template <typename... Args>
std::string cat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return out;
}

// Worker count: explicit value wins, then RLT4REC_THREADS, then hardware.
inline int resolve_workers(int requested) {
    if (requested > 0) {
        return requested;
    }
    if (const char* env = std::getenv("RLT4REC_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) {
            return n;
        }
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, n). Results must be written to index-addressed
// slots by the caller so the outcome is independent of scheduling.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    workers = resolve_workers(workers);
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (std::size_t w = 0; w < n_threads; ++w) {
        pool.emplace_back([&, w]() {
            try {
                for (std::size_t i = w; i < n; i += n_threads) {
                    fn(i);
                }
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) {
                    first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) {
        t.join();
    }
    if (first_error) {
        std::rethrow_exception(first_error);
    }
}

}  // namespace rlt4rec
