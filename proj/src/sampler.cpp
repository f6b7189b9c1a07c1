#include "das/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "das/kernels.hpp"

namespace das::sampler {

Tensor CoordGrid::to_tensor() const { return Tensor({height, width, 2}, coords); }

CoordGrid identity_grid(std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw ShapeError("identity_grid: zero extent");
    CoordGrid g;
    g.height = height;
    g.width = width;
    g.coords.resize(height * width * 2);
    auto axis = [](std::size_t i, std::size_t n) {
        return n == 1 ? 0.0 : 2.0 * static_cast<double>(i) / static_cast<double>(n - 1) - 1.0;
    };
    for (std::size_t h = 0; h < height; ++h)
        for (std::size_t w = 0; w < width; ++w) {
            g.coords[(h * width + w) * 2] = axis(w, width);
            g.coords[(h * width + w) * 2 + 1] = axis(h, height);
        }
    return g;
}

double bilinear_weight(double c, double d, double e, double f) {
    return std::max(0.0, 1.0 - std::abs(c - d)) * std::max(0.0, 1.0 - std::abs(e - f));
}

namespace {

kernels::SampleGeometry geometry(const Tensor& coords, const Tensor& features) {
    const bool batched = features.rank() == 4;
    if (!batched && features.rank() != 3) throw ShapeError("sample: features must be [B,] H x W x C");
    if (coords.rank() != features.rank() || coords.shape().back() != 2)
        throw ShapeError("sample: coords must be [B,] Ho x Wo x 2 matching the feature rank");
    kernels::SampleGeometry g{};
    g.batch = batched ? features.dim(0) : 1;
    if (batched && coords.dim(0) != g.batch) throw ShapeError("sample: batch mismatch");
    g.height = features.dim(batched ? 1 : 0);
    g.width = features.dim(batched ? 2 : 1);
    g.channels = features.shape().back();
    g.out_h = coords.dim(batched ? 1 : 0);
    g.out_w = coords.dim(batched ? 2 : 1);
    for (double v : coords.data())
        if (!std::isfinite(v)) throw NumericsError("sample: non-finite coordinate");
    return g;
}

}  // namespace

Tensor sample(const Tensor& coords, const Tensor& features) {
    const auto g = geometry(coords, features);
    std::vector<double> out(g.batch * g.out_h * g.out_w * g.channels);
    kernels::grid_sample_forward(g, features.data(), coords.data(), out);
    Shape out_shape = features.rank() == 4 ? Shape{g.batch, g.out_h, g.out_w, g.channels}
                                           : Shape{g.out_h, g.out_w, g.channels};
    return detail::make_op("sample", out_shape, std::move(out), {coords, features}, [g](detail::Node& self) {
        auto& pc = *self.parents[0];
        auto& pf = *self.parents[1];
        std::vector<double> gf(pf.data.size()), gc(pc.data.size());
        kernels::grid_sample_backward(g, pf.data, pc.data, self.grad, gf, gc);
        if (pf.requires_grad)
            for (std::size_t i = 0; i < gf.size(); ++i) pf.grad[i] += gf[i];
        if (pc.requires_grad)
            for (std::size_t i = 0; i < gc.size(); ++i) pc.grad[i] += gc[i];
    });
}

SampleGrads sample_backward(const Tensor& coords, const Tensor& features, const Tensor& grad_out) {
    const auto g = geometry(coords, features);
    if (grad_out.numel() != g.batch * g.out_h * g.out_w * g.channels)
        throw ShapeError("sample_backward: upstream gradient has wrong size");
    std::vector<double> gf(features.numel()), gc(coords.numel());
    kernels::grid_sample_backward(g, features.data(), coords.data(), grad_out.data(), gf, gc);
    return {Tensor(features.shape(), std::move(gf)), Tensor(coords.shape(), std::move(gc))};
}

}  // namespace das::sampler
