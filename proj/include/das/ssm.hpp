#pragma once

#include <cstddef>
#include <vector>

#include "das/tensor.hpp"

namespace das::ssm {

struct ZohResult {
    double a_bar;
    double b_bar;
};

/// Zero-order-hold discretization of one diagonal state entry:
/// A_bar = exp(delta A), B_bar = (delta A)^-1 (exp(delta A) - 1) delta B.
/// Below |delta A| < 1e-8 the closed form is replaced by delta B (1 + delta A / 2).
ZohResult discretize_zoh(double a, double b, double delta);

/// Learned parameters of one selective SSM over D channels and N states.
/// A = -exp(a_log) keeps the state matrix negative; delta uses a rank-1
/// projection D -> 1 -> D plus a per-channel bias.
struct SsmParams {
    Tensor a_log;       // D x N
    Tensor delta_down;  // D x 1
    Tensor delta_up;    // 1 x D
    Tensor delta_bias;  // D
    Tensor b_proj;      // D x N
    Tensor c_proj;      // D x N

    std::size_t channels() const { return a_log.dim(0); }
    std::size_t state_size() const { return a_log.dim(1); }
    Tensor a() const;
};

/// A[d, n] = -(n + 1); projections zero.
SsmParams make_default_params(std::size_t channels, std::size_t state);

/// Input-dependent step sizes and B, C for x of shape [L, D] or [B, L, D].
struct SelectiveParams {
    Tensor delta;  // same leading shape as x, last dim D; strictly positive
    Tensor b;      // [..., L, N]
    Tensor c;      // [..., L, N]
};

SelectiveParams selective_params(const Tensor& x, const SsmParams& params);

/// Per-token discretized parameters for a single sequence.
struct DiscreteSsmParams {
    std::size_t length = 0, channels = 0, state = 0;
    std::vector<double> delta;  // L x D
    std::vector<double> a_bar;  // L x D x N
    std::vector<double> b_bar;  // L x D x N

    double a_at(std::size_t t, std::size_t d, std::size_t n) const {
        return a_bar[(t * channels + d) * state + n];
    }
    double b_at(std::size_t t, std::size_t d, std::size_t n) const {
        return b_bar[(t * channels + d) * state + n];
    }
};

/// delta: L x D, a: D x N, b: L x N.
DiscreteSsmParams discretize(const Tensor& delta, const Tensor& a, const Tensor& b);

/// Token-independent parameters broadcast over L tokens.
DiscreteSsmParams make_static(std::size_t length, std::size_t channels, std::size_t state,
                              const std::vector<double>& a_bar, const std::vector<double>& b_bar);

struct StateSequence {
    Tensor h;  // L x D x N
    Tensor y;  // L x D
};

/// Recurrence h_t = A_bar_t h_{t-1} + B_bar_t x_t, y_t = C_t h_t from h_0 = 0
/// with explicitly discretized parameters. x: L x D, c: L x N.
StateSequence selective_scan_states(const Tensor& x, const DiscreteSsmParams& disc, const Tensor& c);
Tensor selective_scan(const Tensor& x, const DiscreteSsmParams& disc, const Tensor& c);

/// Fused discretize-and-scan, differentiable in every input.
/// u, delta: [B,] L x D; a: D x N; b, c: [B,] L x N.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& a, const Tensor& b,
                      const Tensor& c);

/// Impulse response K[d][j] = sum_n C_n A_bar^j B_bar for static parameters.
struct SsmKernel {
    std::size_t channels = 0, length = 0;
    std::vector<double> k;  // D x L

    double at(std::size_t d, std::size_t j) const { return k[d * length + j]; }
};

/// Requires token-independent disc and c (c: L x N or N); ContractError otherwise.
SsmKernel ssm_kernel(const DiscreteSsmParams& disc, const Tensor& c, std::size_t length);

/// Causal convolution y[t,d] = sum_{j<=t} K[d][j] x[t-j,d]; x: L x D.
Tensor ssm_kernel_apply(const Tensor& x, const SsmKernel& kernel);

}  // namespace das::ssm
