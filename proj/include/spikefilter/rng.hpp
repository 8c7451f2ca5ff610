// Seeded random streams. Every stochastic component owns its own Rng so runs
// stay reproducible regardless of scheduling.
#pragma once

#include "spikefilter/linalg.hpp"

#include <cstdint>
#include <random>

namespace spikefilter {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Independent sub-stream seed for (seed, stream id).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
}

/// Named sub-streams used inside one Monte-Carlo run.
enum class Stream : std::uint64_t {
    process = 1,
    measurement = 2,
    decoder = 3,
    network_noise = 4,
};

inline std::uint64_t derive_seed(std::uint64_t seed, Stream stream) {
    return derive_seed(seed, static_cast<std::uint64_t>(stream));
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }

    Vector normal_vector(Index n) {
        Vector v(n);
        for (Index i = 0; i < n; ++i) {
            v(i) = normal();
        }
        return v;
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace spikefilter
