#include "das/scan.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "das/ops.hpp"

namespace das::scan {

bool is_bijection(std::span<const std::size_t> order) {
    std::vector<bool> seen(order.size(), false);
    for (auto i : order) {
        if (i >= order.size() || seen[i]) return false;
        seen[i] = true;
    }
    return true;
}

std::vector<std::size_t> inverse_order(std::span<const std::size_t> order) {
    if (!is_bijection(order)) throw ContractError("inverse_order: not a permutation");
    std::vector<std::size_t> inv(order.size());
    for (std::size_t s = 0; s < order.size(); ++s) inv[order[s]] = s;
    return inv;
}

namespace {

ScanPlan fixed_plan(std::size_t height, std::size_t width, std::vector<std::size_t> order) {
    ScanPlan p;
    p.height = height;
    p.width = width;
    p.order = std::move(order);
    p.source = sampler::identity_grid(height, width);
    return p;
}

void check_extent(std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw ShapeError("scan: zero grid extent");
}

}  // namespace

ScanPlan sweeping_scan(std::size_t height, std::size_t width) {
    check_extent(height, width);
    std::vector<std::size_t> order(height * width);
    std::iota(order.begin(), order.end(), 0);
    return fixed_plan(height, width, std::move(order));
}

ScanPlan continuous_scan(std::size_t height, std::size_t width) {
    check_extent(height, width);
    std::vector<std::size_t> order;
    order.reserve(height * width);
    for (std::size_t h = 0; h < height; ++h)
        for (std::size_t k = 0; k < width; ++k) order.push_back(h * width + (h % 2 == 0 ? k : width - 1 - k));
    return fixed_plan(height, width, std::move(order));
}

ScanPlan local_scan(std::size_t height, std::size_t width, std::size_t window) {
    check_extent(height, width);
    if (window == 0 || window > std::max(height, width))
        throw DomainError("local_scan: window must be in [1, max(H, W)]");
    std::vector<std::size_t> order;
    order.reserve(height * width);
    for (std::size_t wy = 0; wy < height; wy += window)
        for (std::size_t wx = 0; wx < width; wx += window)
            for (std::size_t h = wy; h < std::min(height, wy + window); ++h)
                for (std::size_t w = wx; w < std::min(width, wx + window); ++w) order.push_back(h * width + w);
    return fixed_plan(height, width, std::move(order));
}

Tensor opn_forward(const Tensor& features, const Opn& opn, double offset_range) {
    const bool batched = features.rank() == 4;
    if (!batched && features.rank() != 3) throw ShapeError("opn_forward: features must be [B,] H x W x C");
    const std::size_t channels = features.shape().back();
    Tensor x = batched ? features : reshape(features, {1, features.dim(0), features.dim(1), channels});
    Tensor nchw = permute(x, {0, 3, 1, 2});
    Tensor conv = conv2d(nchw, opn.dw_weight, opn.dw_bias, 1, 1, channels);
    Tensor nhwc = permute(conv, {0, 2, 3, 1});
    Tensor h = gelu(layernorm(nhwc, 3, opn.norm_gamma, opn.norm_beta));
    Tensor raw = linear(h, opn.head_weight, opn.head_bias);
    Tensor offsets = scale(tanh(raw), offset_range);
    return batched ? offsets : reshape(offsets, {features.dim(0), features.dim(1), 2});
}

DasResult dynamic_adaptive_scan(const Tensor& features, const Opn& opn, double offset_range) {
    const bool batched = features.rank() == 4;
    const std::size_t height = features.dim(batched ? 1 : 0);
    const std::size_t width = features.dim(batched ? 2 : 1);
    DasResult r;
    r.offsets = opn_forward(features, opn, offset_range);
    r.raw_coords = add(sampler::identity_grid(height, width).to_tensor(), r.offsets);
    r.coords = clamp(r.raw_coords, -1.0, 1.0);
    r.resampled = sampler::sample(r.coords, features);
    return r;
}

ScanPlan DasResult::plan(std::size_t batch_index) const {
    const bool batched = coords.rank() == 4;
    const std::size_t height = coords.dim(batched ? 1 : 0);
    const std::size_t width = coords.dim(batched ? 2 : 1);
    if (batched && batch_index >= coords.dim(0)) throw ShapeError("DasResult::plan: batch index out of range");
    ScanPlan p = sweeping_scan(height, width);
    auto cd = coords.data();
    const std::size_t per = height * width * 2;
    const std::size_t off = batched ? batch_index * per : 0;
    std::copy_n(cd.begin() + static_cast<long>(off), per, p.source.coords.begin());
    return p;
}

namespace {

void check_plan(const ScanPlan& plan, std::size_t height, std::size_t width) {
    if (plan.height != height || plan.width != width || plan.order.size() != height * width)
        throw ContractError("scan plan does not match the feature grid");
    if (!is_bijection(plan.order)) throw ContractError("scan plan order is not a permutation");
}

}  // namespace

Tensor apply_plan(const Tensor& features, const ScanPlan& plan) {
    const bool batched = features.rank() == 4;
    if (!batched && features.rank() != 3) throw ShapeError("apply_plan: features must be [B,] H x W x C");
    const std::size_t height = features.dim(batched ? 1 : 0);
    const std::size_t width = features.dim(batched ? 2 : 1);
    const std::size_t channels = features.shape().back();
    check_plan(plan, height, width);
    Shape flat = batched ? Shape{features.dim(0), height * width, channels} : Shape{height * width, channels};
    return take(reshape(features, flat), batched ? 1 : 0, plan.order);
}

Tensor unapply_plan(const Tensor& sequence, const ScanPlan& plan) {
    const bool batched = sequence.rank() == 3;
    if (!batched && sequence.rank() != 2) throw ShapeError("unapply_plan: sequence must be [B,] L x C");
    check_plan(plan, plan.height, plan.width);
    if (sequence.dim(batched ? 1 : 0) != plan.size()) throw ContractError("unapply_plan: length mismatch");
    const auto inv = inverse_order(plan.order);
    Tensor grid = take(sequence, batched ? 1 : 0, inv);
    const std::size_t channels = sequence.shape().back();
    Shape out = batched ? Shape{sequence.dim(0), plan.height, plan.width, channels}
                        : Shape{plan.height, plan.width, channels};
    return reshape(grid, out);
}

void write_plan(std::ostream& os, const ScanPlan& plan) {
    char buf[96];
    for (std::size_t s = 0; s < plan.size(); ++s) {
        const std::size_t patch = plan.order[s];
        const double x = plan.source.coords[patch * 2];
        const double y = plan.source.coords[patch * 2 + 1];
        std::snprintf(buf, sizeof buf, "%zu, %.17g, %.17g\n", s, x, y);
        os << buf;
    }
}

}  // namespace das::scan
