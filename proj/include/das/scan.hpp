#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "das/sampler.hpp"
#include "das/tensor.hpp"

namespace das::scan {

/// Order in which the N = H*W patch slots are fed to the SSM, plus where each
/// slot's content is sampled from. Fixed scans sample at the patch itself.
struct ScanPlan {
    std::size_t height = 0, width = 0;
    std::vector<std::size_t> order;  // sequence position -> patch index (raster numbering)
    sampler::CoordGrid source;       // per patch, normalized source coordinate

    std::size_t size() const { return order.size(); }
};

bool is_bijection(std::span<const std::size_t> order);
std::vector<std::size_t> inverse_order(std::span<const std::size_t> order);

/// Row by row, left to right.
ScanPlan sweeping_scan(std::size_t height, std::size_t width);
/// Boustrophedon: even rows left to right, odd rows right to left.
ScanPlan continuous_scan(std::size_t height, std::size_t width);
/// Square windows in raster order, raster order inside each window; edge
/// windows may be ragged. DomainError if window is 0 or exceeds max(H, W).
ScanPlan local_scan(std::size_t height, std::size_t width, std::size_t window);

/// Offset prediction network: depthwise 3x3 conv -> layernorm -> GELU ->
/// linear(C -> 2) -> offset_range * tanh.
struct Opn {
    Tensor dw_weight;   // C x 1 x 3 x 3
    Tensor dw_bias;     // C
    Tensor norm_gamma;  // C
    Tensor norm_beta;   // C
    Tensor head_weight; // C x 2, zero at initialization
    Tensor head_bias;   // 2, zero at initialization
};

constexpr double kDefaultOffsetRange = 0.5;

/// X: [B,] H x W x C -> offsets [B,] H x W x 2 (normalized units).
Tensor opn_forward(const Tensor& features, const Opn& opn, double offset_range = kDefaultOffsetRange);

struct DasResult {
    Tensor offsets;     // [B,] H x W x 2
    Tensor raw_coords;  // identity grid + offsets, before clamping
    Tensor coords;      // clamped to [-1, 1]
    Tensor resampled;   // X' = sample(coords, X)

    /// Plan for one image of the batch: raster order, clamped source coords.
    ScanPlan plan(std::size_t batch_index = 0) const;
};

DasResult dynamic_adaptive_scan(const Tensor& features, const Opn& opn,
                                double offset_range = kDefaultOffsetRange);

/// [B,] H x W x C -> [B,] L x C with sequence slot s holding patch order[s].
Tensor apply_plan(const Tensor& features, const ScanPlan& plan);
/// Inverse of apply_plan: scatters slot s back to patch order[s].
Tensor unapply_plan(const Tensor& sequence, const ScanPlan& plan);

/// One line per slot: "slot_index, src_x_norm, src_y_norm".
void write_plan(std::ostream& os, const ScanPlan& plan);

}  // namespace das::scan
