#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace editleak {

// Counter-based pseudo-random generator built on the splitmix64 finalizer.
//
// A generator is identified by a 64-bit key; drawing the i-th value applies
// the finalizer to key + i*GAMMA, so outputs are a pure function of
// (key, counter). Child streams are derived by hashing a sub-stream id into
// the key, which keeps parallel consumers (worlds, batches, trials)
// order-independent: two streams derived with different ids never share
// state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed + GAMMA)) {}

    // Child generator for sub-stream `id`; independent of this one's counter.
    [[nodiscard]] Rng derive(std::uint64_t id) const {
        Rng child(0);
        child.key_ = mix(key_ ^ mix(id + 0x6A09E667F3BCC909ULL));
        child.counter_ = 0;
        return child;
    }

    std::uint64_t next_u64() {
        counter_ += GAMMA;
        return mix(key_ + counter_);
    }

    // Uniform on (0, 1]; never returns 0 so log() stays finite.
    double next_unit() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; consumes two words per call.
    double next_normal() {
        const double u1 = next_unit();
        const double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(TWO_PI * u2);
    }

    // Uniform integer in [0, n); n must be positive.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // k distinct values from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(next_below(n - i));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

private:
    static constexpr std::uint64_t GAMMA = 0x9E3779B97F4A7C15ULL;
    static constexpr double TWO_PI = 6.283185307179586476925286766559;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

// Stream ids used across the library so derivations stay collision-free.
namespace stream {
inline constexpr std::uint64_t world_embeddings = 1;
inline constexpr std::uint64_t world_templates = 2;
inline constexpr std::uint64_t world_weight = 3;
inline constexpr std::uint64_t world_unembedding = 4;
inline constexpr std::uint64_t batch = 5;
inline constexpr std::uint64_t cov_pool = 6;
inline constexpr std::uint64_t proj_pool = 7;
inline constexpr std::uint64_t cov_estimate = 8;
inline constexpr std::uint64_t trial = 9;
inline constexpr std::uint64_t decoys = 10;
inline constexpr std::uint64_t perturbation = 11;
inline constexpr std::uint64_t alias = 12;
} // namespace stream

} // namespace editleak
