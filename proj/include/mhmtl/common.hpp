// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace mhmtl {

// Error taxonomy. The CLI maps these onto exit codes, everything else
// just throws and lets the caller decide.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ContractError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class RoutingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : s) {
        h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Derives an independent RNG seed from a base seed, a purpose tag, and up to
/// three counters. All randomness in the project flows through this so that
/// runs are pure functions of (seed, config) and resumable mid-run.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
    std::uint64_t h = splitmix64(base ^ fnv1a64(tag));
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    h = splitmix64(h ^ c);
    return h;
}

/// Worker-thread cap: MHMTL_THREADS, clamped to [1, hardware_concurrency].
inline int thread_budget() {
    int hc = static_cast<int>(std::thread::hardware_concurrency());
    if (hc < 1) hc = 1;
    if (const char* env = std::getenv("MHMTL_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v < hc ? v : hc;
    }
    return 1;
}

/// Chunked parallel loop over [0, n). Each chunk is a contiguous index range
/// and chunks never overlap, so results are bit-identical for any thread
/// count as long as the body writes only to its own indices.
inline void parallel_for(std::int64_t n, int threads,
                         const std::function<void(std::int64_t, std::int64_t)>& body) {
    if (n <= 0) return;
    if (threads <= 1 || n == 1) {
        body(0, n);
        return;
    }
    const std::int64_t nt = std::min<std::int64_t>(threads, n);
    const std::int64_t chunk = (n + nt - 1) / nt;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nt));
    for (std::int64_t t = 0; t < nt; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    for (auto& th : pool) th.join();
}

}  // namespace mhmtl
