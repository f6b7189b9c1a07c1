#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "das/kernels.hpp"
#include "das/random.hpp"

using namespace das;
namespace k = das::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    EXPECT_EQ(a.size(), b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(KernelParity, Gemm) {
    Rng rng(1);
    const std::size_t m = 7, kk = 5, n = 9;
    auto a = random_vec(m * kk, rng), b = random_vec(kk * n, rng);
    std::vector<double> c1(m * n), c2(m * n);
    k::serial::gemm_nn(a, b, c1, m, kk, n);
    k::omp::gemm_nn(a, b, c2, m, kk, n);
    EXPECT_LT(max_abs_diff(c1, c2), 1e-13);

    auto bt = random_vec(n * kk, rng);
    std::vector<double> d1(m * n), d2(m * n);
    k::serial::gemm_nt(a, bt, d1, m, kk, n);
    k::omp::gemm_nt(a, bt, d2, m, kk, n);
    EXPECT_LT(max_abs_diff(d1, d2), 1e-13);

    auto g = random_vec(m * n, rng);
    std::vector<double> e1(kk * n), e2(kk * n);
    k::serial::gemm_tn(a, g, e1, m, kk, n);
    k::omp::gemm_tn(a, g, e2, m, kk, n);
    EXPECT_LT(max_abs_diff(e1, e2), 1e-13);
}

TEST(KernelParity, Conv2d) {
    Rng rng(2);
    for (std::size_t groups : {1u, 2u, 4u}) {
        k::ConvGeometry g{2, 4, 7, 6, 4, 3, 3, groups == 2 ? 2u : 1u, 1, groups};
        const std::size_t cin_g = g.in_channels / groups;
        auto x = random_vec(g.batch * g.in_channels * g.height * g.width, rng);
        auto w = random_vec(g.out_channels * cin_g * 9, rng);
        auto bias = random_vec(g.out_channels, rng);
        const std::size_t ny = g.batch * g.out_channels * g.out_h() * g.out_w();
        std::vector<double> y1(ny), y2(ny);
        k::serial::conv2d_forward(g, x, w, bias, y1);
        k::omp::conv2d_forward(g, x, w, bias, y2);
        EXPECT_LT(max_abs_diff(y1, y2), 1e-13);

        auto gy = random_vec(ny, rng);
        std::vector<double> gx1(x.size()), gx2(x.size());
        k::serial::conv2d_backward_input(g, gy, w, gx1);
        k::omp::conv2d_backward_input(g, gy, w, gx2);
        EXPECT_LT(max_abs_diff(gx1, gx2), 1e-13);

        std::vector<double> gw1(w.size()), gw2(w.size()), gb1(bias.size()), gb2(bias.size());
        k::serial::conv2d_backward_weight(g, gy, x, gw1, gb1);
        k::omp::conv2d_backward_weight(g, gy, x, gw2, gb2);
        EXPECT_LT(max_abs_diff(gw1, gw2), 1e-12);
        EXPECT_LT(max_abs_diff(gb1, gb2), 1e-12);
    }
}

// The serial sampler is a direct sum over the whole lattice; the parallel
// one only visits the four neighbours.
TEST(KernelParity, GridSample) {
    Rng rng(3);
    k::SampleGeometry g{2, 5, 6, 3, 4, 5};
    auto f = random_vec(g.batch * g.height * g.width * g.channels, rng);
    auto coords = random_vec(g.batch * g.out_h * g.out_w * 2, rng, -1.3, 1.3);
    coords[0] = -1.0;
    coords[1] = 1.0;
    const std::size_t no = g.batch * g.out_h * g.out_w * g.channels;
    std::vector<double> o1(no), o2(no);
    k::serial::grid_sample_forward(g, f, coords, o1);
    k::omp::grid_sample_forward(g, f, coords, o2);
    EXPECT_LT(max_abs_diff(o1, o2), 1e-13);

    auto gout = random_vec(no, rng);
    std::vector<double> gf1(f.size()), gf2(f.size()), gc1(coords.size()), gc2(coords.size());
    k::serial::grid_sample_backward(g, f, coords, gout, gf1, gc1);
    k::omp::grid_sample_backward(g, f, coords, gout, gf2, gc2);
    EXPECT_LT(max_abs_diff(gf1, gf2), 1e-13);
    EXPECT_LT(max_abs_diff(gc1, gc2), 1e-12);
}

TEST(KernelParity, SelectiveScan) {
    Rng rng(4);
    k::ScanGeometry g{3, 11, 4, 5};
    const std::size_t nu = g.batch * g.length * g.channels, nb = g.batch * g.length * g.state;
    auto u = random_vec(nu, rng);
    auto delta = random_vec(nu, rng, 0.01, 1.5);
    auto a = random_vec(g.channels * g.state, rng, -3.0, -0.1);
    auto b = random_vec(nb, rng), c = random_vec(nb, rng);
    const std::size_t ns = nu * g.state;
    std::vector<double> y1(nu), y2(nu), s1(ns), s2(ns);
    k::serial::selective_scan_forward(g, u, delta, a, b, c, y1, s1);
    k::omp::selective_scan_forward(g, u, delta, a, b, c, y2, s2);
    EXPECT_LT(max_abs_diff(y1, y2), 1e-13);
    EXPECT_LT(max_abs_diff(s1, s2), 1e-13);

    auto gy = random_vec(nu, rng);
    std::vector<double> gu1(nu), gu2(nu), gd1(nu), gd2(nu), ga1(a.size()), ga2(a.size());
    std::vector<double> gb1(nb), gb2(nb), gc1(nb), gc2(nb);
    k::serial::selective_scan_backward(g, u, delta, a, b, c, s1, gy, gu1, gd1, ga1, gb1, gc1);
    k::omp::selective_scan_backward(g, u, delta, a, b, c, s2, gy, gu2, gd2, ga2, gb2, gc2);
    EXPECT_LT(max_abs_diff(gu1, gu2), 1e-12);
    EXPECT_LT(max_abs_diff(gd1, gd2), 1e-12);
    EXPECT_LT(max_abs_diff(ga1, ga2), 1e-12);
    EXPECT_LT(max_abs_diff(gb1, gb2), 1e-12);
    EXPECT_LT(max_abs_diff(gc1, gc2), 1e-12);
}

TEST(KernelHelpers, ToPixelIsCornerAligned) {
    EXPECT_EQ(k::to_pixel(-1.0, 5), 0.0);
    EXPECT_EQ(k::to_pixel(1.0, 5), 4.0);
    EXPECT_EQ(k::to_pixel(0.0, 5), 2.0);
    EXPECT_EQ(k::to_pixel(-1.0 + 2.0 / 3.0, 4), 1.0);
}

TEST(KernelHelpers, ZohPhi) {
    EXPECT_EQ(k::zoh_phi(0.0), 1.0);
    EXPECT_NEAR(k::zoh_phi(-std::log(2.0)), 0.5 / std::log(2.0), 1e-15);
    EXPECT_NEAR(k::zoh_phi(1e-9), 1.0 + 5e-10, 1e-18);
}
