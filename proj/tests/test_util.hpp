#pragma once

#include <vector>

#include "das/ops.hpp"
#include "das/random.hpp"
#include "das/tensor.hpp"

namespace das::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

// Fixed random weights turn any tensor into a scalar with non-degenerate
// gradients.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed = 99) {
    Rng rng(seed);
    Tensor w = random_tensor(t.shape(), rng, -1.0, 1.0);
    return sum(mul(t, w));
}

}  // namespace das::testing
