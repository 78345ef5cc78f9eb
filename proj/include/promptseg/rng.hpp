#pragma once

#include <cstdint>
#include <string_view>

namespace promptseg {

// SplitMix64 (Steele/Lea/Flood). Pinned so splits, embeddings and synthetic
// corpora reproduce bit-for-bit on any platform or language.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1), 53-bit resolution.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // Uniform in [lo,hi).
    double next_double(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform in [0,n); n > 0. Modulo form, pinned for reproducibility.
    uint64_t next_below(uint64_t n) { return next() % n; }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

private:
    uint64_t state_;
};

// FNV-1a over UTF-8 bytes; seeds the per-concept embedding stream.
constexpr uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

} // namespace promptseg
