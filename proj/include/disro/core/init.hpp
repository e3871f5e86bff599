#pragma once

#include "disro/core/rng.hpp"
#include "disro/core/tensor.hpp"

namespace disro::nn {

inline Tensor he_normal(Shape shape, int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
    return t;
}

inline Tensor uniform_init(Shape shape, double bound, Rng& rng) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

}  // namespace disro::nn
