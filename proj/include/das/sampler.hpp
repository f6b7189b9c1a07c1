#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "das/tensor.hpp"

namespace das::sampler {

/// Normalized patch coordinates, H x W x 2 with x (width) first.
/// (-1,-1) is the upper-left patch centre and (1,1) the lower-right one.
struct CoordGrid {
    std::size_t height = 0, width = 0;
    std::vector<double> coords;

    std::pair<double, double> at(std::size_t h, std::size_t w) const {
        const std::size_t i = (h * width + w) * 2;
        return {coords[i], coords[i + 1]};
    }
    Tensor to_tensor() const;
};

/// coords[h,w] = (2w/(W-1) - 1, 2h/(H-1) - 1); a unit axis maps to 0.
CoordGrid identity_grid(std::size_t height, std::size_t width);

/// g(c,d,e,f) = max(0, 1-|c-d|) * max(0, 1-|e-f|), pixel-space arguments.
double bilinear_weight(double c, double d, double e, double f);

/// Bilinear resampling with zero padding outside the map.
/// features: [B,] H x W x C; coords: [B,] Ho x Wo x 2 (normalized, unclamped).
/// Differentiable in both arguments; at exact lattice crossings the
/// coordinate gradient uses the lower neighbouring cell.
Tensor sample(const Tensor& coords, const Tensor& features);

struct SampleGrads {
    Tensor features;
    Tensor coords;
};

/// Explicit vector-Jacobian product of sample() for an upstream gradient.
SampleGrads sample_backward(const Tensor& coords, const Tensor& features, const Tensor& grad_out);

}  // namespace das::sampler
