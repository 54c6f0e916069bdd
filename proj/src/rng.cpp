#include "usra/rng.hpp"

#include <cmath>

namespace usra {

namespace {
uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}
}  // namespace

uint64_t derive_seed(uint64_t base, uint64_t stream) { return splitmix64(splitmix64(base) ^ stream); }

uint64_t derive_seed(uint64_t base, uint64_t stream_a, uint64_t stream_b) {
    return splitmix64(derive_seed(base, stream_a) ^ splitmix64(stream_b + 0x632be59bd9b4e019ull));
}

int Rng::uniform_int(int n) {
    // reject the tail of the 2^32 range so every residue is equally likely
    const uint32_t un = static_cast<uint32_t>(n);
    const uint32_t limit = UINT32_MAX - UINT32_MAX % un;
    uint32_t x;
    do {
        x = next_u32();
    } while (x >= limit);
    return static_cast<int>(x % un);
}

float Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    float u1, u2;
    do {
        u1 = uniform01();
    } while (u1 <= 1e-12f);
    u2 = uniform01();
    const float r = std::sqrt(-2.0f * std::log(u1));
    const float theta = 6.28318530717958647692f * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

}  // namespace usra
