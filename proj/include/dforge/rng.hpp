#pragma once

#include <bit>
#include <cstdint>

namespace dforge {

// Counter-based splittable generator in the splitmix64 family. Every output
// is a pure function of (seed, stream, counter), so any draw can be
// reproduced from its coordinates and substreams never overlap by
// construction. Not cryptographic.

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

inline std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key_(mix64(mix64(seed + kGolden) ^ mix64(stream + 0x6a09e667f3bcc909ull))) {}

    std::uint64_t next() { return mix64(key_ + (++counter_) * kGolden); }

    // Independent generator for trial/worker `idx`; safe to hand to threads.
    CounterRng substream(std::uint64_t idx) const {
        CounterRng r = *this;
        r.key_ = mix64(key_ ^ mix64(idx + kGolden));
        r.counter_ = 0;
        return r;
    }

    // Uniform draw in [0, n) by rejection from the smallest power-of-two
    // window covering n; no modulo bias.
    std::uint64_t below(std::uint64_t n) {
        const int bits = std::bit_width(n - 1);
        const std::uint64_t mask = (bits >= 64) ? ~0ull : ((1ull << bits) - 1);
        for (;;) {
            const std::uint64_t v = next() & mask;
            if (v < n) return v;
        }
    }

    // Uniform digit in [0, q).
    int digit(int q) { return static_cast<int>(below(static_cast<std::uint64_t>(q))); }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}
