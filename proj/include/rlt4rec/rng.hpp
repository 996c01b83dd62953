#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

#include "rlt4rec/util.hpp"

namespace rlt4rec {

inline std::uint64_t splitmix64_once(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Deterministic random stream addressed by (seed, stream id path).
// fork() derives an independent child stream from the stream's key, not from
// its consumption state, so (seed, episode index) always names the same
// stream no matter how much the parent has drawn.
class RngStream {
public:
    explicit RngStream(std::uint64_t key) : key_(splitmix64_once(key)), engine_(key_) {}

    RngStream(std::uint64_t seed, std::uint64_t stream)
        : RngStream(splitmix64_once(seed) ^ splitmix64_once(stream * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull)) {}

    RngStream fork(std::uint64_t id) const {
        return RngStream(key_, id);
    }

    std::uint64_t key() const { return key_; }

    std::uint64_t bits() { return engine_(); }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(bits() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Unbiased integer in [0, n).
    std::size_t index(std::size_t n) {
        if (n == 0) {
            fail("RngStream::index: n must be positive");
        }
        std::uint64_t un = static_cast<std::uint64_t>(n);
        std::uint64_t threshold = (0 - un) % un;  // 2^64 mod n
        std::uint64_t x = bits();
        while (x < threshold) {
            x = bits();
        }
        return static_cast<std::size_t>(x % un);
    }

    // Box-Muller with cached spare.
    double normal(double mean = 0.0, double stddev = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mean + stddev * spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mean + stddev * r * std::cos(theta);
    }

    // Index drawn with probability proportional to non-negative weights.
    std::size_t weighted_index(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) {
            if (w < 0.0 || !std::isfinite(w)) {
                fail("RngStream::weighted_index: weights must be finite and non-negative");
            }
            total += w;
        }
        if (total <= 0.0) {
            fail("RngStream::weighted_index: all weights are zero");
        }
        double u = uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) {
                return i;
            }
        }
        return weights.size() - 1;
    }

    // Fisher-Yates over [0, n) index vector.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = i;
        }
        for (std::size_t i = n; i > 1; --i) {
            std::swap(p[i - 1], p[index(i)]);
        }
        return p;
    }

    // k distinct values from [0, n), uniform without replacement.
    std::vector<int> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n) {
            fail(cat("sample_without_replacement: k=", k, " exceeds n=", n));
        }
        std::vector<int> pool(n);
        for (std::size_t i = 0; i < n; ++i) {
            pool[i] = static_cast<int>(i);
        }
        for (std::size_t i = 0; i < k; ++i) {
            std::size_t j = i + index(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

private:
    std::uint64_t key_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace rlt4rec
