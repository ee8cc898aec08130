#include "voltron/rng.hpp"

#include <cmath>

#include "voltron/error.hpp"

namespace voltron {

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ULL) {
    for (char c : s) {
        h ^= static_cast<uint8_t>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng Rng::seeded(uint64_t seed) {
    Rng r;
    uint64_t s = seed;
    for (auto& w : r.state_) w = splitmix64(s);
    return r;
}

Rng Rng::child(std::string_view name) const {
    uint64_t h = fnv1a(name);
    uint64_t mix = state_[0] ^ rotl(state_[1], 13) ^ rotl(state_[2], 29) ^ state_[3];
    return seeded(mix ^ h);
}

Rng Rng::child(std::string_view name, uint64_t index) const {
    uint64_t h = fnv1a(name) ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    uint64_t mix = state_[0] ^ rotl(state_[1], 13) ^ rotl(state_[2], 29) ^ state_[3];
    return seeded(mix ^ h);
}

uint64_t Rng::next_u64() {
    // xoshiro256++
    uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

int64_t Rng::uniform_int(int64_t n) {
    if (n <= 0) throw ContractError("uniform_int: n must be positive");
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
}

double Rng::normal() {
    double u1 = uniform();
    double u2 = uniform();
    // Guard log(0).
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::truncated_normal(double sigma, double trunc) {
    for (;;) {
        double v = sigma * normal();
        if (v >= -trunc && v <= trunc) return v;
    }
}

}  // namespace voltron
