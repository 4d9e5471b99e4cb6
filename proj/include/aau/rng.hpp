#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "aau/tensor.hpp"

namespace aau {

// Deterministic RNG: mt19937_64 for the raw stream, hand-rolled Box-Muller and
// rejection sampling on top so the value sequence is pinned by this code alone
// (std::normal_distribution is implementation-defined).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

    // uniform in [0, 1)
    double uniform() {
        return (static_cast<double>(gen_() >> 11)) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) { // inclusive range
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo + 1);
        return lo + static_cast<std::int64_t>(gen_() % span);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Normal(0, std) truncated to +/- 2 std via resampling.
    double trunc_normal(double stddev) {
        double z = normal();
        while (std::abs(z) > 2.0) z = normal();
        return z * stddev;
    }

    TensorF tensor_uniform(Shape s, double lo, double hi) {
        TensorF t(std::move(s));
        for (auto& v : t.data) v = uniform(lo, hi);
        return t;
    }

    TensorF tensor_normal(Shape s, double stddev) {
        TensorF t(std::move(s));
        for (auto& v : t.data) v = normal() * stddev;
        return t;
    }

    TensorF tensor_trunc_normal(Shape s, double stddev) {
        TensorF t(std::move(s));
        for (auto& v : t.data) v = trunc_normal(stddev);
        return t;
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace aau
