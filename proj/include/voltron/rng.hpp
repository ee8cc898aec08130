#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace voltron {

// Deterministic xoshiro256++ stream with named child derivation. All
// randomness in the project flows from one root seed through child streams
// ("init", "data", "mask", "gate", "rollout", ...) so that module-level
// determinism composes. State is four u64 words, serialized as-is into
// checkpoints; results are identical across platforms (no std::*_distribution).
class Rng {
  public:
    Rng() : state_{1, 2, 3, 4} {}

    static Rng seeded(uint64_t seed);

    // Derive an independent stream keyed by name (and optionally an index).
    Rng child(std::string_view name) const;
    Rng child(std::string_view name, uint64_t index) const;

    uint64_t next_u64();

    // Uniform in [0, 1) with 53 random mantissa bits.
    double uniform();

    // Uniform integer in [0, n), n > 0. Unbiased via rejection.
    int64_t uniform_int(int64_t n);

    // Standard normal via Box-Muller (fresh pair per call, second discarded,
    // keeping the serializable state minimal).
    double normal();

    // Normal(0, sigma) re-drawn until within [-trunc, trunc] (absolute bound).
    double truncated_normal(double sigma, double trunc);

    // Fisher-Yates.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

    std::array<uint64_t, 4> state() const { return state_; }
    void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

  private:
    std::array<uint64_t, 4> state_;
};

}  // namespace voltron
