#include "das/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>

#include "das/kernels.hpp"

namespace das {

using detail::make_op;
using detail::Node;

Shape broadcast_shapes(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r);
    for (std::size_t i = 0; i < r; ++i) {
        std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("broadcast: incompatible shapes " + shape_str(a) + " and " + shape_str(b));
        out[i] = da == 1 ? db : da;
    }
    return out;
}

namespace {

// Source offset of every output element for an operand broadcast to `out`.
std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
    const std::size_t r = out.size();
    std::vector<std::size_t> stride(r, 0);
    std::size_t s = 1;
    for (std::size_t i = src.size(); i-- > 0;) {
        std::size_t oi = i + (r - src.size());
        stride[oi] = src[i] == 1 ? 0 : s;
        s *= src[i];
    }
    const std::size_t n = shape_numel(out);
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n; ++k) {
        map[k] = off;
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < out[d]) {
                off += stride[d];
                break;
            }
            off -= stride[d] * (idx[d] - 1);
            idx[d] = 0;
        }
    }
    return map;
}

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC = 0.044715;

double unary_forward(UnaryKind k, double x) {
    switch (k) {
        case UnaryKind::neg: return -x;
        case UnaryKind::exp: return std::exp(x);
        case UnaryKind::log: return std::log(x);
        case UnaryKind::tanh: return std::tanh(x);
        case UnaryKind::sigmoid: return 1.0 / (1.0 + std::exp(-x));
        case UnaryKind::softplus: return x > 30.0 ? x : std::log1p(std::exp(x));
        case UnaryKind::gelu: return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x)));
        case UnaryKind::silu: return x / (1.0 + std::exp(-x));
        case UnaryKind::square: return x * x;
        case UnaryKind::sqrt: return std::sqrt(x);
    }
    return 0.0;
}

double unary_derivative(UnaryKind k, double x, double y) {
    switch (k) {
        case UnaryKind::neg: return -1.0;
        case UnaryKind::exp: return y;
        case UnaryKind::log: return 1.0 / x;
        case UnaryKind::tanh: return 1.0 - y * y;
        case UnaryKind::sigmoid: return y * (1.0 - y);
        case UnaryKind::softplus: return 1.0 / (1.0 + std::exp(-x));
        case UnaryKind::gelu: {
            double t = std::tanh(kGeluK * (x + kGeluC * x * x * x));
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluK * (1.0 + 3.0 * kGeluC * x * x);
        }
        case UnaryKind::silu: {
            double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        }
        case UnaryKind::square: return 2.0 * x;
        case UnaryKind::sqrt: return 0.5 / y;
    }
    return 0.0;
}

const char* unary_name(UnaryKind k) {
    switch (k) {
        case UnaryKind::neg: return "neg";
        case UnaryKind::exp: return "exp";
        case UnaryKind::log: return "log";
        case UnaryKind::tanh: return "tanh";
        case UnaryKind::sigmoid: return "sigmoid";
        case UnaryKind::softplus: return "softplus";
        case UnaryKind::gelu: return "gelu";
        case UnaryKind::silu: return "silu";
        case UnaryKind::square: return "square";
        case UnaryKind::sqrt: return "sqrt";
    }
    return "unary";
}

const char* binary_name(BinaryKind k) {
    switch (k) {
        case BinaryKind::add: return "add";
        case BinaryKind::sub: return "sub";
        case BinaryKind::mul: return "mul";
        case BinaryKind::div: return "div";
    }
    return "binary";
}

double binary_forward(BinaryKind k, double a, double b) {
    switch (k) {
        case BinaryKind::add: return a + b;
        case BinaryKind::sub: return a - b;
        case BinaryKind::mul: return a * b;
        case BinaryKind::div: return a / b;
    }
    return 0.0;
}

std::size_t checked_axis(std::size_t axis, std::size_t rank, const char* op) {
    if (axis >= rank)
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                         std::to_string(rank));
    return axis;
}

}  // namespace

Tensor elementwise(BinaryKind kind, const Tensor& a, const Tensor& b) {
    const Shape out_shape = broadcast_shapes(a.shape(), b.shape());
    const std::size_t n = shape_numel(out_shape);
    auto ad = a.data();
    auto bd = b.data();
    std::vector<double> out(n);

    if (a.shape() == out_shape && b.shape() == out_shape) {
        for (std::size_t i = 0; i < n; ++i) out[i] = binary_forward(kind, ad[i], bd[i]);
        return make_op(binary_name(kind), out_shape, std::move(out), {a, b}, [kind](Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            const auto& g = self.grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                double x = pa.data[i], y = pb.data[i];
                switch (kind) {
                    case BinaryKind::add:
                        if (pa.requires_grad) pa.grad[i] += g[i];
                        if (pb.requires_grad) pb.grad[i] += g[i];
                        break;
                    case BinaryKind::sub:
                        if (pa.requires_grad) pa.grad[i] += g[i];
                        if (pb.requires_grad) pb.grad[i] -= g[i];
                        break;
                    case BinaryKind::mul:
                        if (pa.requires_grad) pa.grad[i] += g[i] * y;
                        if (pb.requires_grad) pb.grad[i] += g[i] * x;
                        break;
                    case BinaryKind::div:
                        if (pa.requires_grad) pa.grad[i] += g[i] / y;
                        if (pb.requires_grad) pb.grad[i] -= g[i] * x / (y * y);
                        break;
                }
            }
        });
    }

    auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_index(a.shape(), out_shape));
    auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_index(b.shape(), out_shape));
    for (std::size_t i = 0; i < n; ++i) out[i] = binary_forward(kind, ad[(*ia)[i]], bd[(*ib)[i]]);
    return make_op(binary_name(kind), out_shape, std::move(out), {a, b}, [kind, ia, ib](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& g = self.grad;
        for (std::size_t i = 0; i < g.size(); ++i) {
            std::size_t ja = (*ia)[i], jb = (*ib)[i];
            double x = pa.data[ja], y = pb.data[jb];
            double da = 0.0, db = 0.0;
            switch (kind) {
                case BinaryKind::add: da = 1.0; db = 1.0; break;
                case BinaryKind::sub: da = 1.0; db = -1.0; break;
                case BinaryKind::mul: da = y; db = x; break;
                case BinaryKind::div: da = 1.0 / y; db = -x / (y * y); break;
            }
            if (pa.requires_grad) pa.grad[ja] += g[i] * da;
            if (pb.requires_grad) pb.grad[jb] += g[i] * db;
        }
    });
}

Tensor elementwise(UnaryKind kind, const Tensor& a) {
    auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = unary_forward(kind, ad[i]);
    return make_op(unary_name(kind), a.shape(), std::move(out), {a}, [kind](Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            p.grad[i] += self.grad[i] * unary_derivative(kind, p.data[i], self.data[i]);
    });
}

Tensor scale(const Tensor& a, double factor) {
    auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] * factor;
    return make_op("scale", a.shape(), std::move(out), {a}, [factor](Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * factor;
    });
}

Tensor add_scalar(const Tensor& a, double value) {
    auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] + value;
    return make_op("add_scalar", a.shape(), std::move(out), {a}, [](Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
    });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    auto ad = a.data();
    std::vector<double> out(ad.size());
    for (std::size_t i = 0; i < ad.size(); ++i) out[i] = std::clamp(ad[i], lo, hi);
    return make_op("clamp", a.shape(), std::move(out), {a}, [lo, hi](Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (p.data[i] >= lo && p.data[i] <= hi) p.grad[i] += self.grad[i];
    });
}

Tensor sum(const Tensor& a) {
    auto ad = a.data();
    double s = 0.0;
    for (double v : ad) s += v;
    return make_op("sum", {}, {s}, {a}, [](Node& self) {
        auto& p = *self.parents[0];
        for (auto& g : p.grad) g += self.grad[0];
    });
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    auto ad = a.data();
    double s = 0.0;
    for (double v : ad) s += v;
    return make_op("mean", {}, {s * inv}, {a}, [inv](Node& self) {
        auto& p = *self.parents[0];
        for (auto& g : p.grad) g += self.grad[0] * inv;
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    auto ad = a.data();
    return make_op("reshape", std::move(shape), std::vector<double>(ad.begin(), ad.end()), {a},
                   [](Node& self) {
                       auto& p = *self.parents[0];
                       for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i];
                   });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& axes) {
    const Shape& in = a.shape();
    const std::size_t r = in.size();
    if (axes.size() != r) throw ShapeError("permute: expected " + std::to_string(r) + " axes");
    std::vector<bool> used(r, false);
    for (auto ax : axes) {
        checked_axis(ax, r, "permute");
        if (used[ax]) throw ShapeError("permute: repeated axis");
        used[ax] = true;
    }
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
    Shape out_shape(r);
    std::vector<std::size_t> stride(r);
    for (std::size_t i = 0; i < r; ++i) {
        out_shape[i] = in[axes[i]];
        stride[i] = in_stride[axes[i]];
    }
    const std::size_t n = a.numel();
    auto src = std::make_shared<std::vector<std::size_t>>(n);
    std::vector<std::size_t> idx(r, 0);
    std::size_t off = 0;
    for (std::size_t k = 0; k < n; ++k) {
        (*src)[k] = off;
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < out_shape[d]) {
                off += stride[d];
                break;
            }
            off -= stride[d] * (idx[d] - 1);
            idx[d] = 0;
        }
    }
    auto ad = a.data();
    std::vector<double> out(n);
    for (std::size_t k = 0; k < n; ++k) out[k] = ad[(*src)[k]];
    return make_op("permute", out_shape, std::move(out), {a}, [src](Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t k = 0; k < self.grad.size(); ++k) p.grad[(*src)[k]] += self.grad[k];
    });
}

Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& in = a.shape();
    checked_axis(axis, in.size(), "narrow");
    if (start + length > in[axis]) throw ShapeError("narrow: range exceeds axis extent");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
    for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
    const std::size_t ext = in[axis];
    Shape out_shape = in;
    out_shape[axis] = length;
    auto ad = a.data();
    std::vector<double> out(outer * length * inner);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(&ad[(o * ext + start) * inner], length * inner, &out[o * length * inner]);
    return make_op("narrow", out_shape, std::move(out), {a}, [outer, ext, start, length, inner](Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < length * inner; ++i)
                p.grad[(o * ext + start) * inner + i] += self.grad[o * length * inner + i];
    });
}

Tensor take(const Tensor& a, std::size_t axis, std::span<const std::size_t> indices) {
    const Shape& in = a.shape();
    checked_axis(axis, in.size(), "take");
    const std::size_t ext = in[axis];
    for (auto i : indices)
        if (i >= ext) throw ShapeError("take: index out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= in[i];
    for (std::size_t i = axis + 1; i < in.size(); ++i) inner *= in[i];
    auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
    const std::size_t m = idx->size();
    Shape out_shape = in;
    out_shape[axis] = m;
    auto ad = a.data();
    std::vector<double> out(outer * m * inner);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < m; ++j)
            std::copy_n(&ad[(o * ext + (*idx)[j]) * inner], inner, &out[(o * m + j) * inner]);
    return make_op("take", out_shape, std::move(out), {a}, [outer, ext, inner, idx](Node& self) {
        auto& p = *self.parents[0];
        const std::size_t m = idx->size();
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t j = 0; j < m; ++j)
                for (std::size_t i = 0; i < inner; ++i)
                    p.grad[(o * ext + (*idx)[j]) * inner + i] += self.grad[(o * m + j) * inner + i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts[0].shape();
    checked_axis(axis, first.size(), "concat");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    std::vector<std::size_t> ext;
    std::size_t total = 0;
    for (const auto& t : parts) {
        const Shape& s = t.shape();
        if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i]) throw ShapeError("concat: extent mismatch");
        ext.push_back(s[axis]);
        total += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    std::vector<double> out(outer * total * inner);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        auto d = parts[k].data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(&d[o * ext[k] * inner], ext[k] * inner, &out[(o * total + off) * inner]);
        off += ext[k];
    }
    return make_op("concat", out_shape, std::move(out), parts, [outer, inner, total, ext](Node& self) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < self.parents.size(); ++k) {
            auto& p = *self.parents[k];
            if (p.requires_grad) {
                for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t i = 0; i < ext[k] * inner; ++i)
                        p.grad[o * ext[k] * inner + i] += self.grad[(o * total + off) * inner + i];
            }
            off += ext[k];
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul: expects rank-2 operands");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    std::vector<double> out(m * n);
    kernels::gemm_nn(a.data(), b.data(), out, m, k, n);
    return make_op("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
            std::vector<double> g(m * k);
            kernels::gemm_nt(self.grad, pb.data, g, m, n, k);
            for (std::size_t i = 0; i < g.size(); ++i) pa.grad[i] += g[i];
        }
        if (pb.requires_grad) {
            std::vector<double> g(k * n);
            kernels::gemm_tn(pa.data, self.grad, g, m, k, n);
            for (std::size_t i = 0; i < g.size(); ++i) pb.grad[i] += g[i];
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() < 1 || weight.rank() != 2) throw ShapeError("linear: bad ranks");
    const std::size_t in = weight.dim(0), outf = weight.dim(1);
    if (x.shape().back() != in)
        throw ShapeError("linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outf)) throw ShapeError("linear: bad bias");
    const std::size_t m = x.numel() / in;
    std::vector<double> out(m * outf);
    kernels::gemm_nn(x.data(), weight.data(), out, m, in, outf);
    if (bias.defined()) {
        auto bd = bias.data();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < outf; ++j) out[i * outf + j] += bd[j];
    }
    Shape out_shape = x.shape();
    out_shape.back() = outf;
    std::vector<Tensor> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_op("linear", out_shape, std::move(out), parents, [m, in, outf](Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        if (px.requires_grad) {
            std::vector<double> g(m * in);
            kernels::gemm_nt(self.grad, pw.data, g, m, outf, in);
            for (std::size_t i = 0; i < g.size(); ++i) px.grad[i] += g[i];
        }
        if (pw.requires_grad) {
            std::vector<double> g(in * outf);
            kernels::gemm_tn(px.data, self.grad, g, m, in, outf);
            for (std::size_t i = 0; i < g.size(); ++i) pw.grad[i] += g[i];
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            auto& pb = *self.parents[2];
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < outf; ++j) pb.grad[j] += self.grad[i * outf + j];
        }
    });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding, std::size_t groups) {
    const bool batched = x.rank() == 4;
    if (!batched && x.rank() != 3) throw ShapeError("conv2d: input must be CxHxW or BxCxHxW");
    if (weight.rank() != 4) throw ShapeError("conv2d: weight must be rank 4");
    if (stride == 0 || groups == 0) throw ShapeError("conv2d: stride and groups must be positive");
    kernels::ConvGeometry g{};
    g.batch = batched ? x.dim(0) : 1;
    g.in_channels = x.dim(batched ? 1 : 0);
    g.height = x.dim(batched ? 2 : 1);
    g.width = x.dim(batched ? 3 : 2);
    g.out_channels = weight.dim(0);
    g.kernel_h = weight.dim(2);
    g.kernel_w = weight.dim(3);
    g.stride = stride;
    g.padding = padding;
    g.groups = groups;
    if (g.in_channels % groups != 0 || g.out_channels % groups != 0)
        throw ShapeError("conv2d: groups must divide channel counts");
    if (weight.dim(1) != g.in_channels / groups)
        throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(x.shape()));
    if (g.kernel_h > g.height + 2 * padding || g.kernel_w > g.width + 2 * padding)
        throw ShapeError("conv2d: kernel larger than padded input");
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.out_channels))
        throw ShapeError("conv2d: bad bias shape");
    const std::size_t oh = g.out_h(), ow = g.out_w();
    std::vector<double> out(g.batch * g.out_channels * oh * ow);
    std::span<const double> bspan = bias.defined() ? bias.data() : std::span<const double>{};
    kernels::conv2d_forward(g, x.data(), weight.data(), bspan, out);
    Shape out_shape = batched ? Shape{g.batch, g.out_channels, oh, ow} : Shape{g.out_channels, oh, ow};
    std::vector<Tensor> parents{x, weight};
    if (bias.defined()) parents.push_back(bias);
    return make_op("conv2d", out_shape, std::move(out), parents, [g](Node& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        if (px.requires_grad) {
            std::vector<double> gx(px.data.size());
            kernels::conv2d_backward_input(g, self.grad, pw.data, gx);
            for (std::size_t i = 0; i < gx.size(); ++i) px.grad[i] += gx[i];
        }
        const bool want_b = pb && pb->requires_grad;
        if (pw.requires_grad || want_b) {
            std::vector<double> gw(pw.data.size());
            std::vector<double> gb(want_b ? g.out_channels : 0);
            kernels::conv2d_backward_weight(g, self.grad, px.data, gw, gb);
            if (pw.requires_grad)
                for (std::size_t i = 0; i < gw.size(); ++i) pw.grad[i] += gw[i];
            if (want_b)
                for (std::size_t i = 0; i < gb.size(); ++i) pb->grad[i] += gb[i];
        }
    });
}

Tensor layernorm(const Tensor& x, std::size_t axis, const Tensor& gamma, const Tensor& beta, double eps) {
    const Shape& s = x.shape();
    checked_axis(axis, s.size(), "layernorm");
    const std::size_t n = s[axis];
    if (gamma.defined() && (gamma.rank() != 1 || gamma.dim(0) != n)) throw ShapeError("layernorm: bad gamma");
    if (beta.defined() && (beta.rank() != 1 || beta.dim(0) != n)) throw ShapeError("layernorm: bad beta");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    auto xd = x.data();
    auto xhat = std::make_shared<std::vector<double>>(xd.size());
    auto inv_std = std::make_shared<std::vector<double>>(outer * inner);
    std::vector<double> out(xd.size());
    const double* gd = gamma.defined() ? gamma.data().data() : nullptr;
    const double* bd = beta.defined() ? beta.data().data() : nullptr;
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            const std::size_t base = o * n * inner + i;
            double mu = 0.0;
            for (std::size_t k = 0; k < n; ++k) mu += xd[base + k * inner];
            mu /= static_cast<double>(n);
            double var = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                double d = xd[base + k * inner] - mu;
                var += d * d;
            }
            var /= static_cast<double>(n);
            const double is = 1.0 / std::sqrt(var + eps);
            (*inv_std)[o * inner + i] = is;
            for (std::size_t k = 0; k < n; ++k) {
                const std::size_t j = base + k * inner;
                double h = (xd[j] - mu) * is;
                (*xhat)[j] = h;
                out[j] = h * (gd ? gd[k] : 1.0) + (bd ? bd[k] : 0.0);
            }
        }
    std::vector<Tensor> parents{x};
    const bool has_gamma = gamma.defined(), has_beta = beta.defined();
    if (has_gamma) parents.push_back(gamma);
    if (has_beta) parents.push_back(beta);
    return make_op("layernorm", s, std::move(out), parents,
                   [outer, inner, n, xhat, inv_std, has_gamma, has_beta](Node& self) {
                       auto& px = *self.parents[0];
                       Node* pg = has_gamma ? self.parents[1].get() : nullptr;
                       Node* pb = has_beta ? self.parents[has_gamma ? 2 : 1].get() : nullptr;
                       const auto& g = self.grad;
                       const auto& h = *xhat;
                       std::vector<double> gh(n);
                       for (std::size_t o = 0; o < outer; ++o)
                           for (std::size_t i = 0; i < inner; ++i) {
                               const std::size_t base = o * n * inner + i;
                               double m1 = 0.0, m2 = 0.0;
                               for (std::size_t k = 0; k < n; ++k) {
                                   const std::size_t j = base + k * inner;
                                   if (pg && pg->requires_grad) pg->grad[k] += g[j] * h[j];
                                   if (pb && pb->requires_grad) pb->grad[k] += g[j];
                                   gh[k] = g[j] * (pg ? pg->data[k] : 1.0);
                                   m1 += gh[k];
                                   m2 += gh[k] * h[j];
                               }
                               if (!px.requires_grad) continue;
                               m1 /= static_cast<double>(n);
                               m2 /= static_cast<double>(n);
                               const double is = (*inv_std)[o * inner + i];
                               for (std::size_t k = 0; k < n; ++k) {
                                   const std::size_t j = base + k * inner;
                                   px.grad[j] += is * (gh[k] - m1 - h[j] * m2);
                               }
                           }
                   });
}

namespace {

Tensor batchnorm_apply(const char* op, const Tensor& x, const std::vector<double>& mu,
                       const std::vector<double>& var, const Tensor& gamma, const Tensor& beta,
                       double eps, bool batch_stats) {
    const std::size_t c = x.shape().back();
    const std::size_t m = x.numel() / c;
    auto xd = x.data();
    auto gd = gamma.data();
    auto bd = beta.data();
    auto xhat = std::make_shared<std::vector<double>>(xd.size());
    auto inv_std = std::make_shared<std::vector<double>>(c);
    for (std::size_t k = 0; k < c; ++k) (*inv_std)[k] = 1.0 / std::sqrt(var[k] + eps);
    std::vector<double> out(xd.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < c; ++k) {
            double h = (xd[i * c + k] - mu[k]) * (*inv_std)[k];
            (*xhat)[i * c + k] = h;
            out[i * c + k] = h * gd[k] + bd[k];
        }
    return make_op(op, x.shape(), std::move(out), {x, gamma, beta},
                   [m, c, xhat, inv_std, batch_stats](Node& self) {
                       auto& px = *self.parents[0];
                       auto& pg = *self.parents[1];
                       auto& pb = *self.parents[2];
                       const auto& g = self.grad;
                       const auto& h = *xhat;
                       std::vector<double> sg(c, 0.0), sgh(c, 0.0);
                       for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t k = 0; k < c; ++k) {
                               sg[k] += g[i * c + k];
                               sgh[k] += g[i * c + k] * h[i * c + k];
                           }
                       for (std::size_t k = 0; k < c; ++k) {
                           if (pg.requires_grad) pg.grad[k] += sgh[k];
                           if (pb.requires_grad) pb.grad[k] += sg[k];
                       }
                       if (!px.requires_grad) return;
                       const double inv_m = 1.0 / static_cast<double>(m);
                       for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t k = 0; k < c; ++k) {
                               const double scale = pg.data[k] * (*inv_std)[k];
                               double gi = g[i * c + k];
                               if (batch_stats) gi -= sg[k] * inv_m + h[i * c + k] * sgh[k] * inv_m;
                               px.grad[i * c + k] += scale * gi;
                           }
                   });
}

void check_bn_params(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    if (x.rank() < 1) throw ShapeError("batchnorm: rank-0 input");
    const std::size_t c = x.shape().back();
    if (gamma.rank() != 1 || gamma.dim(0) != c || beta.rank() != 1 || beta.dim(0) != c)
        throw ShapeError("batchnorm: affine parameters must have the channel extent");
}

}  // namespace

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchStats* stats,
                       double eps) {
    check_bn_params(x, gamma, beta);
    const std::size_t c = x.shape().back();
    const std::size_t m = x.numel() / c;
    auto xd = x.data();
    std::vector<double> mu(c, 0.0), var(c, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < c; ++k) mu[k] += xd[i * c + k];
    for (auto& v : mu) v /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t k = 0; k < c; ++k) {
            double d = xd[i * c + k] - mu[k];
            var[k] += d * d;
        }
    for (auto& v : var) v /= static_cast<double>(m);
    if (stats) {
        stats->mean = mu;
        stats->var = var;
    }
    return batchnorm_apply("batchnorm_train", x, mu, var, gamma, beta, eps, true);
}

Tensor batchnorm_infer(const Tensor& x, std::span<const double> running_mean,
                       std::span<const double> running_var, const Tensor& gamma, const Tensor& beta,
                       double eps) {
    check_bn_params(x, gamma, beta);
    const std::size_t c = x.shape().back();
    if (running_mean.size() != c || running_var.size() != c)
        throw ShapeError("batchnorm_infer: running statistics have wrong extent");
    std::vector<double> mu(running_mean.begin(), running_mean.end());
    std::vector<double> var(running_var.begin(), running_var.end());
    return batchnorm_apply("batchnorm_infer", x, mu, var, gamma, beta, eps, false);
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.rank() != 3 && x.rank() != 4) throw ShapeError("global_avg_pool: expects HxWxC or BxHxWxC");
    const bool batched = x.rank() == 4;
    const std::size_t b = batched ? x.dim(0) : 1;
    const std::size_t hw = x.dim(batched ? 1 : 0) * x.dim(batched ? 2 : 1);
    const std::size_t c = x.shape().back();
    const double inv = 1.0 / static_cast<double>(hw);
    auto xd = x.data();
    std::vector<double> out(b * c, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t p = 0; p < hw; ++p)
            for (std::size_t k = 0; k < c; ++k) out[i * c + k] += xd[(i * hw + p) * c + k];
        for (std::size_t k = 0; k < c; ++k) out[i * c + k] *= inv;
    }
    Shape out_shape = batched ? Shape{b, c} : Shape{c};
    return make_op("global_avg_pool", out_shape, std::move(out), {x}, [b, hw, c, inv](Node& self) {
        auto& p = *self.parents[0];
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t q = 0; q < hw; ++q)
                for (std::size_t k = 0; k < c; ++k) p.grad[(i * hw + q) * c + k] += self.grad[i * c + k] * inv;
    });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels, double smoothing) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be B x K");
    const std::size_t b = logits.dim(0), k = logits.dim(1);
    if (labels.size() != b) throw ShapeError("cross_entropy: label count mismatch");
    if (smoothing < 0.0 || smoothing >= 1.0) throw DomainError("cross_entropy: smoothing outside [0,1)");
    auto ld = logits.data();
    auto probs = std::make_shared<std::vector<double>>(b * k);
    auto targets = std::make_shared<std::vector<double>>(b * k, smoothing / static_cast<double>(k));
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw DomainError("cross_entropy: label out of range");
        (*targets)[i * k + static_cast<std::size_t>(labels[i])] += 1.0 - smoothing;
        double mx = *std::max_element(&ld[i * k], &ld[i * k] + k);
        double z = 0.0;
        for (std::size_t j = 0; j < k; ++j) z += std::exp(ld[i * k + j] - mx);
        const double lz = std::log(z) + mx;
        for (std::size_t j = 0; j < k; ++j) {
            (*probs)[i * k + j] = std::exp(ld[i * k + j] - lz);
            total -= (*targets)[i * k + j] * (ld[i * k + j] - lz);
        }
    }
    const double inv_b = 1.0 / static_cast<double>(b);
    return make_op("cross_entropy", {}, {total * inv_b}, {logits}, [probs, targets, inv_b](Node& self) {
        auto& p = *self.parents[0];
        const double g = self.grad[0] * inv_b;
        for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += g * ((*probs)[i] - (*targets)[i]);
    });
}

}  // namespace das
