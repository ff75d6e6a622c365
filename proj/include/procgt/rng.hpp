#ifndef PROCGT_RNG_HPP
#define PROCGT_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace procgt {

// FNV-1a over bytes. Used for seed derivation and artifact identity hashes.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::uint64_t hash_mix(std::uint64_t h, std::uint64_t v) {
    // splitmix64 finalizer over the combined words
    h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    h ^= h >> 30;
    h *= 0xbf58476d1ce4e5b9ULL;
    h ^= h >> 27;
    h *= 0x94d049bb133111ebULL;
    h ^= h >> 31;
    return h;
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
    std::uint64_t h = fnv1a64(stream);
    h = hash_mix(h, master);
    h = hash_mix(h, a);
    h = hash_mix(h, b);
    return h;
}

// All random draws in the project go through this wrapper so that
// sequences only depend on the seed, never on the standard library's
// distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform index in [0, bound) by rejection sampling.
    std::size_t index(std::size_t bound) {
        if (bound <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return static_cast<std::size_t>(x % bound);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Box-Muller, cosine branch only so each call consumes exactly two draws.
    double normal(double mean, double stddev) {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

} // namespace procgt

#endif
