#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace epinet {

/// Counter-based random stream.
///
/// Output k of a stream is a SplitMix64 finalizer applied to key + k * golden,
/// so a stream is fully described by (seed, name, counter). Streams with
/// different names are statistically independent, and any draw can be
/// reproduced without replaying the ones before it.
class RandomStream {
public:
    using result_type = std::uint64_t;

    RandomStream(std::uint64_t seed, std::string_view name) noexcept
        : key_(mix(seed ^ mix(hash_name(name)))) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    result_type operator()() noexcept { return mix(key_ + (++counter_) * kGolden); }

    /// Uniform double on [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    bool bernoulli(double p) noexcept { return uniform() < p; }

    /// Uniform integer on [0, n). Lemire's multiply-shift; bias is below 2^-64 * n.
    std::uint64_t below(std::uint64_t n) noexcept {
        return static_cast<std::uint64_t>((static_cast<unsigned __int128>((*this)()) * n) >> 64);
    }

    std::uint64_t counter() const noexcept { return counter_; }
    void seek(std::uint64_t counter) noexcept { counter_ = counter; }

    /// Child stream keyed by this stream's key and a sub-name.
    RandomStream child(std::string_view name) const noexcept { return RandomStream(key_, name); }

    static constexpr std::uint64_t hash_name(std::string_view name) noexcept {
        std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace epinet
