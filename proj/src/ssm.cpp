#include "das/ssm.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "das/kernels.hpp"
#include "das/ops.hpp"

namespace das::ssm {

ZohResult discretize_zoh(double a, double b, double delta) {
    if (!(delta > 0.0)) throw DomainError("discretize_zoh: delta must be positive");
    const double z = delta * a;
    return {std::exp(z), delta * b * kernels::zoh_phi(z)};
}

Tensor SsmParams::a() const { return neg(exp(a_log)); }

SsmParams make_default_params(std::size_t channels, std::size_t state) {
    SsmParams p;
    std::vector<double> a_log(channels * state);
    for (std::size_t d = 0; d < channels; ++d)
        for (std::size_t n = 0; n < state; ++n) a_log[d * state + n] = std::log(static_cast<double>(n + 1));
    p.a_log = Tensor({channels, state}, std::move(a_log));
    p.delta_down = Tensor::zeros({channels, 1});
    p.delta_up = Tensor::zeros({1, channels});
    p.delta_bias = Tensor::zeros({channels});
    p.b_proj = Tensor::zeros({channels, state});
    p.c_proj = Tensor::zeros({channels, state});
    return p;
}

SelectiveParams selective_params(const Tensor& x, const SsmParams& params) {
    if (x.rank() < 2 || x.shape().back() != params.channels())
        throw ShapeError("selective_params: input " + shape_str(x.shape()) + " does not end in D=" +
                         std::to_string(params.channels()));
    SelectiveParams out;
    Tensor low = linear(x, params.delta_down);
    out.delta = softplus(linear(low, params.delta_up, params.delta_bias));
    out.b = linear(x, params.b_proj);
    out.c = linear(x, params.c_proj);
    return out;
}

DiscreteSsmParams discretize(const Tensor& delta, const Tensor& a, const Tensor& b) {
    if (delta.rank() != 2 || a.rank() != 2 || b.rank() != 2) throw ShapeError("discretize: expects rank-2 inputs");
    DiscreteSsmParams d;
    d.length = delta.dim(0);
    d.channels = delta.dim(1);
    d.state = a.dim(1);
    if (a.dim(0) != d.channels || b.dim(0) != d.length || b.dim(1) != d.state)
        throw ShapeError("discretize: inconsistent L, D, N");
    auto dd = delta.data();
    auto ad = a.data();
    auto bd = b.data();
    d.delta.assign(dd.begin(), dd.end());
    d.a_bar.resize(d.length * d.channels * d.state);
    d.b_bar.resize(d.a_bar.size());
    for (std::size_t t = 0; t < d.length; ++t)
        for (std::size_t c = 0; c < d.channels; ++c)
            for (std::size_t n = 0; n < d.state; ++n) {
                auto r = discretize_zoh(ad[c * d.state + n], bd[t * d.state + n], dd[t * d.channels + c]);
                d.a_bar[(t * d.channels + c) * d.state + n] = r.a_bar;
                d.b_bar[(t * d.channels + c) * d.state + n] = r.b_bar;
            }
    return d;
}

DiscreteSsmParams make_static(std::size_t length, std::size_t channels, std::size_t state,
                              const std::vector<double>& a_bar, const std::vector<double>& b_bar) {
    if (a_bar.size() != channels * state || b_bar.size() != channels * state)
        throw ShapeError("make_static: expects D x N parameters");
    DiscreteSsmParams d;
    d.length = length;
    d.channels = channels;
    d.state = state;
    d.delta.assign(length * channels, 1.0);
    d.a_bar.reserve(length * channels * state);
    d.b_bar.reserve(length * channels * state);
    for (std::size_t t = 0; t < length; ++t) {
        d.a_bar.insert(d.a_bar.end(), a_bar.begin(), a_bar.end());
        d.b_bar.insert(d.b_bar.end(), b_bar.begin(), b_bar.end());
    }
    return d;
}

StateSequence selective_scan_states(const Tensor& x, const DiscreteSsmParams& disc, const Tensor& c) {
    if (x.rank() != 2 || x.dim(0) != disc.length || x.dim(1) != disc.channels)
        throw ShapeError("selective_scan: x must be L x D matching the discretized parameters");
    if (c.rank() != 2 || c.dim(0) != disc.length || c.dim(1) != disc.state)
        throw ShapeError("selective_scan: C must be L x N");
    const std::size_t L = disc.length, D = disc.channels, N = disc.state;
    auto xd = x.data();
    auto cd = c.data();
    std::vector<double> h(L * D * N), y(L * D);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t d = 0; d < D; ++d) {
            double acc = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                const double prev = t == 0 ? 0.0 : h[((t - 1) * D + d) * N + n];
                const double v = disc.a_at(t, d, n) * prev + disc.b_at(t, d, n) * xd[t * D + d];
                h[(t * D + d) * N + n] = v;
                acc += cd[t * N + n] * v;
            }
            if (!std::isfinite(acc)) throw NumericsError("selective_scan: non-finite state");
            y[t * D + d] = acc;
        }
    return {Tensor({L, D, N}, std::move(h)), Tensor({L, D}, std::move(y))};
}

Tensor selective_scan(const Tensor& x, const DiscreteSsmParams& disc, const Tensor& c) {
    return selective_scan_states(x, disc, c).y;
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c) {
    const bool batched = u.rank() == 3;
    if (!batched && u.rank() != 2) throw ShapeError("selective_scan: u must be [B,] L x D");
    if (delta.shape() != u.shape()) throw ShapeError("selective_scan: delta must match u");
    if (a.rank() != 2) throw ShapeError("selective_scan: A must be D x N");
    kernels::ScanGeometry g{};
    g.batch = batched ? u.dim(0) : 1;
    g.length = u.dim(batched ? 1 : 0);
    g.channels = u.shape().back();
    g.state = a.dim(1);
    if (a.dim(0) != g.channels) throw ShapeError("selective_scan: A rows must equal D");
    Shape bc_shape = batched ? Shape{g.batch, g.length, g.state} : Shape{g.length, g.state};
    if (b.shape() != bc_shape || c.shape() != bc_shape)
        throw ShapeError("selective_scan: B and C must be " + shape_str(bc_shape));
    for (double v : delta.data())
        if (!(v > 0.0)) throw DomainError("selective_scan: delta must be positive");

    auto states = std::make_shared<std::vector<double>>(g.batch * g.length * g.channels * g.state);
    std::vector<double> y(u.numel());
    kernels::selective_scan_forward(g, u.data(), delta.data(), a.data(), b.data(), c.data(), y, *states);
    for (double v : *states)
        if (!std::isfinite(v)) throw NumericsError("selective_scan: non-finite state");

    return detail::make_op("selective_scan", u.shape(), std::move(y), {u, delta, a, b, c},
                           [g, states](detail::Node& self) {
                               auto& pu = *self.parents[0];
                               auto& pd = *self.parents[1];
                               auto& pa = *self.parents[2];
                               auto& pb = *self.parents[3];
                               auto& pc = *self.parents[4];
                               std::vector<double> gu(pu.data.size()), gd(pd.data.size()),
                                   ga(pa.data.size()), gb(pb.data.size()), gc(pc.data.size());
                               kernels::selective_scan_backward(g, pu.data, pd.data, pa.data, pb.data,
                                                                pc.data, *states, self.grad, gu, gd, ga,
                                                                gb, gc);
                               auto acc = [](detail::Node& p, const std::vector<double>& g) {
                                   if (!p.requires_grad) return;
                                   for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
                               };
                               acc(pu, gu);
                               acc(pd, gd);
                               acc(pa, ga);
                               acc(pb, gb);
                               acc(pc, gc);
                           });
}

SsmKernel ssm_kernel(const DiscreteSsmParams& disc, const Tensor& c, std::size_t length) {
    const std::size_t D = disc.channels, N = disc.state;
    if (disc.length == 0) throw ContractError("ssm_kernel: empty parameter set");
    for (std::size_t t = 1; t < disc.length; ++t)
        for (std::size_t i = 0; i < D * N; ++i)
            if (disc.a_bar[t * D * N + i] != disc.a_bar[i] || disc.b_bar[t * D * N + i] != disc.b_bar[i])
                throw ContractError("ssm_kernel: parameters vary across tokens");
    std::vector<double> cv;
    auto cd = c.data();
    if (c.rank() == 1 && c.dim(0) == N) {
        cv.assign(cd.begin(), cd.end());
    } else if (c.rank() == 2 && c.dim(1) == N) {
        for (std::size_t t = 1; t < c.dim(0); ++t)
            for (std::size_t n = 0; n < N; ++n)
                if (cd[t * N + n] != cd[n]) throw ContractError("ssm_kernel: C varies across tokens");
        cv.assign(cd.begin(), cd.begin() + static_cast<long>(N));
    } else {
        throw ShapeError("ssm_kernel: C must be N or L x N");
    }
    SsmKernel k;
    k.channels = D;
    k.length = length;
    k.k.resize(D * length);
    for (std::size_t d = 0; d < D; ++d) {
        // power[n] tracks A_bar^j B_bar
        std::vector<double> power(N);
        for (std::size_t n = 0; n < N; ++n) power[n] = disc.b_bar[d * N + n];
        for (std::size_t j = 0; j < length; ++j) {
            double s = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                s += cv[n] * power[n];
                power[n] *= disc.a_bar[d * N + n];
            }
            k.k[d * length + j] = s;
        }
    }
    return k;
}

Tensor ssm_kernel_apply(const Tensor& x, const SsmKernel& kernel) {
    if (x.rank() != 2 || x.dim(1) != kernel.channels) throw ShapeError("ssm_kernel_apply: x must be L x D");
    const std::size_t L = x.dim(0), D = kernel.channels;
    if (L > kernel.length) throw ShapeError("ssm_kernel_apply: kernel shorter than sequence");
    auto xd = x.data();
    std::vector<double> y(L * D, 0.0);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t d = 0; d < D; ++d) {
            double s = 0.0;
            for (std::size_t j = 0; j <= t; ++j) s += kernel.at(d, j) * xd[(t - j) * D + d];
            y[t * D + d] = s;
        }
    return Tensor({L, D}, std::move(y));
}

}  // namespace das::ssm
