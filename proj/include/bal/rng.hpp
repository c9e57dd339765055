#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace bal {

/// SplitMix64 finalizer. Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

/// 64-bit FNV-1a over a string, used to turn names into stream ids.
constexpr std::uint64_t hash_name(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    return h;
}

/// Seeded, domain-separated random stream.
///
/// A stream is identified by (seed, stream_id). `derive` builds child
/// streams from integer tags (window id, pass index, layer index, ...), so
/// every consumer of randomness owns a stream that does not depend on the
/// order in which other consumers ran. Only integer arithmetic is used to
/// produce raw words, which keeps sequences identical across platforms.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id),
          state_(mix64(seed ^ mix64(stream_id + 0x9E3779B97F4A7C15ull))) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }

    RngStream derive(std::uint64_t tag) const {
        return RngStream(seed_, mix64(stream_id_ ^ mix64(tag + 0xD1B54A32D192ED03ull)));
    }

    RngStream derive(std::initializer_list<std::uint64_t> tags) const {
        RngStream s = *this;
        for (auto t : tags) s = s.derive(t);
        return s;
    }

    RngStream derive(std::string_view name) const { return derive(hash_name(name)); }

    std::uint64_t next_u64() noexcept {
        state_ += 0x9E3779B97F4A7C15ull;
        return mix64(state_);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n) noexcept {
        if (n <= 1) return 0;
        const std::uint64_t limit = (~std::uint64_t{0}) - ((~std::uint64_t{0}) % n);
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    /// Standard normal via Box-Muller (no cached second deviate).
    double normal() noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t state_;
};

/// Fisher-Yates shuffle driven by an RngStream (std::shuffle is not
/// reproducible across standard library implementations).
template <typename Container>
void shuffle(Container& c, RngStream& rng) {
    for (std::size_t i = c.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        using std::swap;
        swap(c[i - 1], c[j]);
    }
}

}  // namespace bal
