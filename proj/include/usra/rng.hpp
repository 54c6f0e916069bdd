#pragma once

#include <cstdint>
#include <random>

namespace usra {

/// Mixes a base seed with stream ids so independent consumers (episodes,
/// batch draws, augmentation calls) get decorrelated, reproducible streams.
uint64_t derive_seed(uint64_t base, uint64_t stream);
uint64_t derive_seed(uint64_t base, uint64_t stream_a, uint64_t stream_b);

/// Deterministic RNG. std::mt19937 output is pinned by the standard and the
/// value mappings below avoid std::*_distribution, whose sequences are
/// implementation-defined.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(static_cast<uint32_t>(derive_seed(seed, 0x9e3779b9u))) {}

    uint32_t next_u32() { return gen_(); }

    /// Uniform in [0,1) with 24 bits of mantissa.
    float uniform01() { return static_cast<float>(next_u32() >> 8) * (1.0f / 16777216.0f); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n), n >= 1. Rejection sampling keeps it unbiased.
    int uniform_int(int n);

    /// Standard normal via Box-Muller; second value cached.
    float normal();

    float normal(float mean, float stddev) { return mean + stddev * normal(); }

private:
    std::mt19937 gen_;
    bool has_spare_ = false;
    float spare_ = 0.0f;
};

}  // namespace usra
