#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "olbp/common.hpp"
#include "olbp/tensor.hpp"

namespace olbp {

// A named learnable tensor. Names must be unique within a network; the
// checkpoint format keys entries by them.
template <typename T>
struct Parameter {
    Tensor4<T> tensor;
    std::string name;
    bool learnable = true;
};

// Uniform values in [-b, +b] with b = sqrt(6 / (fan_in + fan_out)), where
// fan_in = c*h*w and fan_out = n*h*w of the given shape. Reproducible per seed.
template <typename T>
Tensor4<T> xavier_init(Shape4 shape, std::uint64_t rng_seed) {
    const std::int64_t fan_in = shape.c * shape.h * shape.w;
    const std::int64_t fan_out = shape.n * shape.h * shape.w;
    if (fan_in <= 0 || fan_out <= 0)
        throw ShapeError("xavier_init: zero fan for shape " + shape.str());
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> uni(-bound, bound);
    Tensor4<T> t(shape);
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; ++i) t.data()[i] = static_cast<T>(uni(rng));
    return t;
}

template <typename T>
double xavier_bound(Shape4 shape) {
    return std::sqrt(6.0 / static_cast<double>(shape.c * shape.h * shape.w +
                                               shape.n * shape.h * shape.w));
}

}  // namespace olbp
