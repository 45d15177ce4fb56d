#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace olbp {

// Thrown when tensor/image dimensions do not line up. The message names the
// offending axis so pipeline errors are actionable.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Bad or missing input data (files, labels, fixations outside bounds, ...).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values or other numerical breakdowns.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64 step; used to derive independent sub-seeds from one master seed
// so that every consumer (dropout, shuffle, init) is a pure function of
// (seed, counter) and checkpoints need no RNG state beyond counters.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace olbp
