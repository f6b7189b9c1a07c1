#include <algorithm>
#include <cmath>
#include <vector>

#include "das/kernels.hpp"

namespace das::kernels {

double to_pixel(double t, std::size_t extent) {
    double p = (t + 1.0) * 0.5 * static_cast<double>(extent - 1);
    double r = std::nearbyint(p);
    if (std::abs(p - r) < 1e-9) return r;
    return p;
}

double zoh_phi(double z) {
    if (std::abs(z) < 1e-8) return 1.0 + 0.5 * z;
    return std::expm1(z) / z;
}

namespace serial {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
            c[i * n + j] = s;
        }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < n; ++p) s += a[i * n + p] * b[j * n + p];
            c[i * k + j] = s;
        }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < m; ++p) s += a[p * k + i] * b[p * n + j];
            c[i * n + j] = s;
        }
}

namespace {

// Input pixel feeding output (oh, ow) through tap (kh, kw), or false if it
// falls in the zero padding.
bool tap_source(const ConvGeometry& g, std::size_t oh, std::size_t ow, std::size_t kh,
                std::size_t kw, std::size_t& ih, std::size_t& iw) {
    long y = static_cast<long>(oh * g.stride + kh) - static_cast<long>(g.padding);
    long x = static_cast<long>(ow * g.stride + kw) - static_cast<long>(g.padding);
    if (y < 0 || x < 0 || y >= static_cast<long>(g.height) || x >= static_cast<long>(g.width))
        return false;
    ih = static_cast<std::size_t>(y);
    iw = static_cast<std::size_t>(x);
    return true;
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y) {
    const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
    const std::size_t cin_g = g.in_channels / g.groups, cout_g = g.out_channels / g.groups;
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t oc = 0; oc < g.out_channels; ++oc)
            for (std::size_t oh = 0; oh < oh_n; ++oh)
                for (std::size_t ow = 0; ow < ow_n; ++ow) {
                    double s = bias.empty() ? 0.0 : bias[oc];
                    std::size_t grp = oc / cout_g;
                    for (std::size_t icl = 0; icl < cin_g; ++icl)
                        for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
                            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                                std::size_t ih, iw;
                                if (!tap_source(g, oh, ow, kh, kw, ih, iw)) continue;
                                std::size_t ic = grp * cin_g + icl;
                                s += w[((oc * cin_g + icl) * g.kernel_h + kh) * g.kernel_w + kw] *
                                     x[((n * g.in_channels + ic) * g.height + ih) * g.width + iw];
                            }
                    y[((n * g.out_channels + oc) * oh_n + oh) * ow_n + ow] = s;
                }
}

void conv2d_backward_input(const ConvGeometry& g, std::span<const double> gy,
                           std::span<const double> w, std::span<double> gx) {
    const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
    const std::size_t cin_g = g.in_channels / g.groups, cout_g = g.out_channels / g.groups;
    std::fill(gx.begin(), gx.end(), 0.0);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t oc = 0; oc < g.out_channels; ++oc)
            for (std::size_t oh = 0; oh < oh_n; ++oh)
                for (std::size_t ow = 0; ow < ow_n; ++ow) {
                    double go = gy[((n * g.out_channels + oc) * oh_n + oh) * ow_n + ow];
                    std::size_t grp = oc / cout_g;
                    for (std::size_t icl = 0; icl < cin_g; ++icl)
                        for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
                            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                                std::size_t ih, iw;
                                if (!tap_source(g, oh, ow, kh, kw, ih, iw)) continue;
                                std::size_t ic = grp * cin_g + icl;
                                gx[((n * g.in_channels + ic) * g.height + ih) * g.width + iw] +=
                                    go * w[((oc * cin_g + icl) * g.kernel_h + kh) * g.kernel_w + kw];
                            }
                }
}

void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> gy,
                            std::span<const double> x, std::span<double> gw, std::span<double> gbias) {
    const std::size_t oh_n = g.out_h(), ow_n = g.out_w();
    const std::size_t cin_g = g.in_channels / g.groups, cout_g = g.out_channels / g.groups;
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gbias.begin(), gbias.end(), 0.0);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t oc = 0; oc < g.out_channels; ++oc)
            for (std::size_t oh = 0; oh < oh_n; ++oh)
                for (std::size_t ow = 0; ow < ow_n; ++ow) {
                    double go = gy[((n * g.out_channels + oc) * oh_n + oh) * ow_n + ow];
                    if (!gbias.empty()) gbias[oc] += go;
                    std::size_t grp = oc / cout_g;
                    for (std::size_t icl = 0; icl < cin_g; ++icl)
                        for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
                            for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                                std::size_t ih, iw;
                                if (!tap_source(g, oh, ow, kh, kw, ih, iw)) continue;
                                std::size_t ic = grp * cin_g + icl;
                                gw[((oc * cin_g + icl) * g.kernel_h + kh) * g.kernel_w + kw] +=
                                    go * x[((n * g.in_channels + ic) * g.height + ih) * g.width + iw];
                            }
                }
}

namespace {

double tent(double u) { return std::max(0.0, 1.0 - std::abs(u)); }

// Left derivative of the tent at u = c - d; at the kinks this selects the
// lower lattice cell.
double tent_slope(double u) {
    if (u > -1.0 && u <= 0.0) return 1.0;
    if (u > 0.0 && u <= 1.0) return -1.0;
    return 0.0;
}

}  // namespace

// Literal weighted sum over every lattice point of the map; quadratic cost,
// only meant as an oracle.
void grid_sample_forward(const SampleGeometry& g, std::span<const double> features,
                         std::span<const double> coords, std::span<double> out) {
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t o = 0; o < g.out_h * g.out_w; ++o) {
            std::size_t ci = (b * g.out_h * g.out_w + o) * 2;
            double ax = to_pixel(coords[ci], g.width);
            double ay = to_pixel(coords[ci + 1], g.height);
            double* dst = &out[(b * g.out_h * g.out_w + o) * g.channels];
            std::fill(dst, dst + g.channels, 0.0);
            for (std::size_t ry = 0; ry < g.height; ++ry)
                for (std::size_t rx = 0; rx < g.width; ++rx) {
                    double wgt = tent(ax - static_cast<double>(rx)) * tent(ay - static_cast<double>(ry));
                    if (wgt == 0.0) continue;
                    const double* src = &features[((b * g.height + ry) * g.width + rx) * g.channels];
                    for (std::size_t c = 0; c < g.channels; ++c) dst[c] += wgt * src[c];
                }
        }
}

void grid_sample_backward(const SampleGeometry& g, std::span<const double> features,
                          std::span<const double> coords, std::span<const double> gout,
                          std::span<double> gfeatures, std::span<double> gcoords) {
    std::fill(gfeatures.begin(), gfeatures.end(), 0.0);
    std::fill(gcoords.begin(), gcoords.end(), 0.0);
    const double sx = 0.5 * static_cast<double>(g.width - 1);
    const double sy = 0.5 * static_cast<double>(g.height - 1);
    for (std::size_t b = 0; b < g.batch; ++b)
        for (std::size_t o = 0; o < g.out_h * g.out_w; ++o) {
            std::size_t ci = (b * g.out_h * g.out_w + o) * 2;
            double ax = to_pixel(coords[ci], g.width);
            double ay = to_pixel(coords[ci + 1], g.height);
            const double* go = &gout[(b * g.out_h * g.out_w + o) * g.channels];
            double gax = 0.0, gay = 0.0;
            for (std::size_t ry = 0; ry < g.height; ++ry)
                for (std::size_t rx = 0; rx < g.width; ++rx) {
                    double ux = ax - static_cast<double>(rx), uy = ay - static_cast<double>(ry);
                    double wx = tent(ux), wy = tent(uy);
                    double dwx = tent_slope(ux), dwy = tent_slope(uy);
                    if (wx == 0.0 && wy == 0.0 && dwx == 0.0 && dwy == 0.0) continue;
                    std::size_t fi = ((b * g.height + ry) * g.width + rx) * g.channels;
                    double dot = 0.0;
                    for (std::size_t c = 0; c < g.channels; ++c) {
                        gfeatures[fi + c] += wx * wy * go[c];
                        dot += go[c] * features[fi + c];
                    }
                    gax += dwx * wy * dot;
                    gay += wx * dwy * dot;
                }
            gcoords[ci] = gax * sx;
            gcoords[ci + 1] = gay * sy;
        }
}

// Materializes the discretized A_bar, B_bar per token before running the
// recurrence.
void selective_scan_forward(const ScanGeometry& g, std::span<const double> u,
                            std::span<const double> delta, std::span<const double> a,
                            std::span<const double> b, std::span<const double> c,
                            std::span<double> y, std::span<double> states) {
    const std::size_t L = g.length, D = g.channels, N = g.state;
    std::vector<double> a_bar(L * D * N), b_bar(L * D * N);
    for (std::size_t bi = 0; bi < g.batch; ++bi) {
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t d = 0; d < D; ++d)
                for (std::size_t n = 0; n < N; ++n) {
                    double dt = delta[(bi * L + t) * D + d];
                    double z = dt * a[d * N + n];
                    a_bar[(t * D + d) * N + n] = std::exp(z);
                    b_bar[(t * D + d) * N + n] = dt * b[(bi * L + t) * N + n] * zoh_phi(z);
                }
        for (std::size_t d = 0; d < D; ++d)
            for (std::size_t t = 0; t < L; ++t) {
                double acc = 0.0;
                for (std::size_t n = 0; n < N; ++n) {
                    double prev = t == 0 ? 0.0 : states[((bi * L + t - 1) * D + d) * N + n];
                    double h = a_bar[(t * D + d) * N + n] * prev +
                               b_bar[(t * D + d) * N + n] * u[(bi * L + t) * D + d];
                    states[((bi * L + t) * D + d) * N + n] = h;
                    acc += c[(bi * L + t) * N + n] * h;
                }
                y[(bi * L + t) * D + d] = acc;
            }
    }
}

void selective_scan_backward(const ScanGeometry& g, std::span<const double> u,
                             std::span<const double> delta, std::span<const double> a,
                             std::span<const double> b, std::span<const double> c,
                             std::span<const double> states, std::span<const double> gy,
                             std::span<double> gu, std::span<double> gdelta, std::span<double> ga,
                             std::span<double> gb, std::span<double> gc) {
    const std::size_t L = g.length, D = g.channels, N = g.state;
    std::fill(gu.begin(), gu.end(), 0.0);
    std::fill(gdelta.begin(), gdelta.end(), 0.0);
    std::fill(ga.begin(), ga.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    std::fill(gc.begin(), gc.end(), 0.0);
    // Adjoint of h_t, accumulated backwards in time.
    std::vector<double> gh(L * D * N);
    for (std::size_t bi = 0; bi < g.batch; ++bi) {
        std::fill(gh.begin(), gh.end(), 0.0);
        for (std::size_t t = L; t-- > 0;)
            for (std::size_t d = 0; d < D; ++d)
                for (std::size_t n = 0; n < N; ++n) {
                    double v = c[(bi * L + t) * N + n] * gy[(bi * L + t) * D + d];
                    if (t + 1 < L) {
                        double z_next = delta[(bi * L + t + 1) * D + d] * a[d * N + n];
                        v += std::exp(z_next) * gh[((t + 1) * D + d) * N + n];
                    }
                    gh[(t * D + d) * N + n] = v;
                }
        for (std::size_t t = 0; t < L; ++t)
            for (std::size_t d = 0; d < D; ++d)
                for (std::size_t n = 0; n < N; ++n) {
                    std::size_t s = ((bi * L + t) * D + d) * N + n;
                    double dt = delta[(bi * L + t) * D + d];
                    double an = a[d * N + n];
                    double z = dt * an;
                    double ab = std::exp(z);
                    double bn = b[(bi * L + t) * N + n];
                    double ut = u[(bi * L + t) * D + d];
                    double prev = t == 0 ? 0.0 : states[s - D * N];
                    double g_h = gh[(t * D + d) * N + n];
                    gc[(bi * L + t) * N + n] += gy[(bi * L + t) * D + d] * states[s];
                    double g_ab = g_h * prev;
                    double g_bb = g_h * ut;
                    gu[(bi * L + t) * D + d] += g_h * dt * bn * zoh_phi(z);
                    // A_bar = e^z; B_bar = B (e^z - 1)/A = dt B phi(z)
                    double dphi;
                    if (std::abs(z) < 1e-2)
                        dphi = 0.5 + z / 3.0 + z * z / 8.0 + z * z * z / 30.0;
                    else
                        dphi = (ab * (z - 1.0) + 1.0) / (z * z);
                    gdelta[(bi * L + t) * D + d] += g_ab * an * ab + g_bb * bn * ab;
                    ga[d * N + n] += g_ab * dt * ab + g_bb * bn * dt * dt * dphi;
                    gb[(bi * L + t) * N + n] += g_bb * dt * zoh_phi(z);
                }
    }
}

}  // namespace serial
}  // namespace das::kernels
