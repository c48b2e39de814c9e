#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace energen {

// Deterministic random stream. All distributions are implemented explicitly
// (Box-Muller normals, multiply-shift bounded ints) so that a given seed
// produces the same draw sequence on every platform; std::*_distribution
// makes no such guarantee.
class Rng {
  public:
    explicit Rng(uint64_t seed) : base_seed_(seed), engine_(mix64(seed)) {}

    uint64_t next_u64() { return engine_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // (0, 1]
    double uniform_open() { return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform_open();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // [0, n); n >= 1
    uint64_t below(uint64_t n) {
        return static_cast<uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(below(static_cast<uint64_t>(hi - lo) + 1));
    }

    template <typename T>
    void fill_normal(T* dst, size_t n) {
        for (size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(normal());
    }

    // Independent substream; derive(i) and derive(j) are uncorrelated for i != j.
    Rng derive(uint64_t stream) const { return Rng(derive_seed(stream)); }

    uint64_t derive_seed(uint64_t stream) const { return mix64(base_seed_ + mix64(stream + 1)); }

    uint64_t base_seed() const { return base_seed_; }

    static uint64_t mix64(uint64_t x) {
        // splitmix64 finalizer
        x += 0x9E3779B97F4A7C15ull;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
        return x ^ (x >> 31);
    }

  private:
    uint64_t base_seed_;
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace energen
