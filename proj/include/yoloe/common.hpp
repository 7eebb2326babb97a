// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace yoloe {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Incompatible dimensions passed to an operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Invalid values: non-finite results, bad arguments, empty regions.
class ValueError : public Error {
public:
    using Error::Error;
};

// Thrown when a training stage produces a non-finite loss.
class TrainingDiverged : public Error {
public:
    using Error::Error;
};

// Seeded RNG with implementation-pinned scaling so the same seed yields the
// same stream on every platform (std::uniform_real_distribution is not
// specified bit-exactly; mt19937_64 is).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() {
        // xorshift* over a splitmix-initialized state; tiny and portable
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545f4914f6cdd1dull;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    double normal() {
        // Box-Muller; consumes two uniforms per call, no cached spare (keeps
        // the stream position independent of call history)
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

} // namespace yoloe
