#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "star/tensor.hpp"

namespace star {

/// SplitMix64 finalizer, used to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Seeded generator whose draws are identical on every platform.
/// std::normal_distribution is implementation-defined, so the Gaussian
/// path uses Box-Muller on top of the standardized mt19937_64 stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(engine_() % span);
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
        has_spare_ = true;
        return r * std::cos(2.0 * std::numbers::pi * u2);
    }

    template <class S = float>
    Tensor<S> normal_tensor(const Shape& shape, double std = 1.0) {
        Tensor<S> t(shape);
        for (auto& v : t.vec()) v = static_cast<S>(std * normal());
        return t;
    }

    template <class S = float>
    Tensor<S> uniform_tensor(const Shape& shape, double lo = 0.0, double hi = 1.0) {
        Tensor<S> t(shape);
        for (auto& v : t.vec()) v = static_cast<S>(uniform(lo, hi));
        return t;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace star
