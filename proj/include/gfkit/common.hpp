#pragma once

#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace gfkit {

// ---------------------------------------------------------------------------
// Error taxonomy. Everything derives from std::runtime_error so callers can
// catch broadly; the CLI maps these onto exit codes.
// ---------------------------------------------------------------------------

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct RangeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateRowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NonFiniteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DeterminismError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct StaleCacheError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Op/FLOP accounting. Used by the complexity-shape tests and the scaling
// benchmark; counting is always on (the cost is one add per kernel call).
// ---------------------------------------------------------------------------

struct OpCounters {
    std::uint64_t ops = 0;
    std::uint64_t flops = 0;
};

inline OpCounters& op_counters() {
    static thread_local OpCounters counters;
    return counters;
}

inline void count_op(std::uint64_t flops) {
    auto& c = op_counters();
    c.ops += 1;
    c.flops += flops;
}

inline void reset_op_counters() { op_counters() = OpCounters{}; }

// ---------------------------------------------------------------------------
// Tensor payload memory tracking: an allocator high-water mark, resettable
// per benchmark window. Tracks only tensor data/grad buffers, which dominate.
// ---------------------------------------------------------------------------

class MemTracker {
public:
    static MemTracker& instance() {
        static MemTracker tracker;
        return tracker;
    }

    void add(std::int64_t bytes) {
        const std::int64_t now = current_.fetch_add(bytes, std::memory_order_relaxed) + bytes;
        std::int64_t prev = peak_.load(std::memory_order_relaxed);
        while (now > prev && !peak_.compare_exchange_weak(prev, now, std::memory_order_relaxed)) {
        }
    }

    void sub(std::int64_t bytes) { current_.fetch_sub(bytes, std::memory_order_relaxed); }

    std::int64_t current_bytes() const { return current_.load(std::memory_order_relaxed); }
    std::int64_t peak_bytes() const { return peak_.load(std::memory_order_relaxed); }

    void reset_peak() { peak_.store(current_bytes(), std::memory_order_relaxed); }

private:
    std::atomic<std::int64_t> current_{0};
    std::atomic<std::int64_t> peak_{0};
};

template <class T>
struct TrackedAlloc {
    using value_type = T;

    TrackedAlloc() noexcept = default;
    template <class U>
    TrackedAlloc(const TrackedAlloc<U>&) noexcept {}

    T* allocate(std::size_t n) {
        MemTracker::instance().add(static_cast<std::int64_t>(n * sizeof(T)));
        return static_cast<T*>(::operator new(n * sizeof(T)));
    }
    void deallocate(T* p, std::size_t n) noexcept {
        MemTracker::instance().sub(static_cast<std::int64_t>(n * sizeof(T)));
        ::operator delete(p);
    }

    friend bool operator==(const TrackedAlloc&, const TrackedAlloc&) { return true; }
    friend bool operator!=(const TrackedAlloc&, const TrackedAlloc&) { return false; }
};

// FNV-1a, used for content hashes of parameters and data files.
inline std::uint64_t fnv1a(const void* bytes, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a_str(const std::string& s, std::uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), seed);
}

}  // namespace gfkit
