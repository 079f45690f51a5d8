// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "mcdm/tensor.hpp"

namespace mcdm {

// FNV-1a 64-bit; used for config hashes and for deriving per-stage seeds.
inline uint64_t fnv1a64(const void* bytes, size_t n, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}
inline uint64_t fnv1a64(const std::string& s, uint64_t h = 1469598103934665603ull) {
    return fnv1a64(s.data(), s.size(), h);
}

// Seeded RNG with implementation-owned distributions so streams are
// reproducible bit-for-bit across builds of this project.
class Rng {
public:
    explicit Rng(uint64_t seed) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    double uniform() { // [0,1)
        return static_cast<double>(gen_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    int64_t uniform_int(int64_t lo, int64_t hi) { // inclusive
        uint64_t span = static_cast<uint64_t>(hi - lo + 1);
        return lo + static_cast<int64_t>(gen_() % span);
    }

    double normal() { // Box-Muller, cached spare
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    void fill_normal(Tensor& t, double mean = 0.0, double stddev = 1.0) {
        for (auto& v : t.data) v = mean + stddev * normal();
    }
    Tensor normal_tensor(std::vector<int64_t> shape, double mean = 0.0, double stddev = 1.0) {
        Tensor t(std::move(shape));
        fill_normal(t, mean, stddev);
        return t;
    }
    void fill_uniform(Tensor& t, double lo, double hi) {
        for (auto& v : t.data) v = uniform(lo, hi);
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Independent stream for a named sub-task of a run.
inline Rng make_rng(uint64_t seed, const std::string& tag) {
    return Rng(fnv1a64(tag, 1469598103934665603ull ^ (seed * 0x9e3779b97f4a7c15ull + 0x2545f4914f6cdd1dull)));
}

} // namespace mcdm
