#pragma once

#include <atomic>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace grf {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape / rank violations and broken call contracts.
struct DimError : Error {
    using Error::Error;
};

// Bad configuration values, unknown keys, invalid orders.
struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// A batch is missing something the model needs.
struct InputError : Error {
    using Error::Error;
};

// Training produced a non-finite loss.
struct DivergenceError : Error {
    using Error::Error;
};

inline std::string format_shape(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// Deterministic RNG. Distribution objects are recreated per draw so the
// stream depends only on the engine state, never on leftover distribution
// caches.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }

    double normal(double mean, double stddev) {
        std::normal_distribution<double> d(mean, stddev);
        return d(engine_);
    }

    uint64_t next_u64() { return engine_(); }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

// Live/peak byte accounting for tensor buffers. The peak is the benchmark's
// allocation-footprint proxy; it tracks tensor storage only, not OS RSS.
namespace memtrack {

inline std::atomic<long long>& live_counter() {
    static std::atomic<long long> v{0};
    return v;
}

inline std::atomic<long long>& peak_counter() {
    static std::atomic<long long> v{0};
    return v;
}

inline void on_alloc(long long bytes) {
    long long live = live_counter().fetch_add(bytes, std::memory_order_relaxed) + bytes;
    long long peak = peak_counter().load(std::memory_order_relaxed);
    while (live > peak &&
           !peak_counter().compare_exchange_weak(peak, live, std::memory_order_relaxed)) {
    }
}

inline void on_free(long long bytes) {
    live_counter().fetch_sub(bytes, std::memory_order_relaxed);
}

inline long long live_bytes() { return live_counter().load(std::memory_order_relaxed); }
inline long long peak_bytes() { return peak_counter().load(std::memory_order_relaxed); }

// Restart the high-water mark from the current live level.
inline void reset_peak() { peak_counter().store(live_bytes(), std::memory_order_relaxed); }

template <typename T>
struct TrackingAllocator {
    using value_type = T;

    TrackingAllocator() = default;
    template <typename U>
    TrackingAllocator(const TrackingAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) {
        on_alloc(static_cast<long long>(n * sizeof(T)));
        return std::allocator<T>{}.allocate(n);
    }

    void deallocate(T* p, std::size_t n) noexcept {
        on_free(static_cast<long long>(n * sizeof(T)));
        std::allocator<T>{}.deallocate(p, n);
    }

    template <typename U>
    bool operator==(const TrackingAllocator<U>&) const noexcept {
        return true;
    }
};

}  // namespace memtrack

}  // namespace grf
