// Serial reference vs OpenMP kernels on model-sized problems.
//   das_bench [--benchmark_filter=scan]
#include <benchmark/benchmark.h>

#include <vector>

#include "das/kernels.hpp"
#include "das/random.hpp"

namespace k = das::kernels;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    das::Rng rng(seed);
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(lo, hi);
    return v;
}

template <class Fn>
void gemm(benchmark::State& state, Fn fn) {
    const auto n = static_cast<std::size_t>(state.range(0));
    auto a = filled(n * n, 1), b = filled(n * n, 2);
    std::vector<double> c(n * n);
    for (auto _ : state) {
        fn(a, b, c, n, n, n);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

// Depthwise 3x3 and dense 3x3 at stage-one sizes of the micro model.
template <class Fn>
void conv(benchmark::State& state, Fn fn) {
    const auto groups = static_cast<std::size_t>(state.range(0));
    k::ConvGeometry g{8, 32, 16, 16, 32, 3, 3, 1, 1, groups};
    auto x = filled(g.batch * g.in_channels * g.height * g.width, 3);
    auto w = filled(g.out_channels * (g.in_channels / groups) * 9, 4);
    auto bias = filled(g.out_channels, 5);
    std::vector<double> y(g.batch * g.out_channels * g.out_h() * g.out_w());
    for (auto _ : state) {
        fn(g, x, w, bias, y);
        benchmark::DoNotOptimize(y.data());
    }
}

template <class Fn>
void grid_sample(benchmark::State& state, Fn fn) {
    const auto s = static_cast<std::size_t>(state.range(0));
    k::SampleGeometry g{8, s, s, 32, s, s};
    auto f = filled(g.batch * s * s * g.channels, 6);
    auto coords = filled(g.batch * s * s * 2, 7, -1.1, 1.1);
    std::vector<double> out(g.batch * s * s * g.channels);
    for (auto _ : state) {
        fn(g, f, coords, out);
        benchmark::DoNotOptimize(out.data());
    }
}

template <class Fn>
void scan(benchmark::State& state, Fn fn) {
    k::ScanGeometry g{8, static_cast<std::size_t>(state.range(0)), 32, 16};
    const std::size_t bld = g.batch * g.length * g.channels, bln = g.batch * g.length * g.state;
    auto u = filled(bld, 8), delta = filled(bld, 9, 0.01, 0.5), a = filled(g.channels * g.state, 10, -2.0, -0.1);
    auto b = filled(bln, 11), c = filled(bln, 12);
    std::vector<double> y(bld), states(bld * g.state);
    for (auto _ : state) {
        fn(g, u, delta, a, b, c, y, states);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(bld * g.state));
}

void BM_gemm_serial(benchmark::State& s) { gemm(s, k::serial::gemm_nn); }
void BM_gemm_omp(benchmark::State& s) { gemm(s, k::omp::gemm_nn); }
void BM_conv_serial(benchmark::State& s) { conv(s, k::serial::conv2d_forward); }
void BM_conv_omp(benchmark::State& s) { conv(s, k::omp::conv2d_forward); }
void BM_grid_sample_serial(benchmark::State& s) { grid_sample(s, k::serial::grid_sample_forward); }
void BM_grid_sample_omp(benchmark::State& s) { grid_sample(s, k::omp::grid_sample_forward); }
void BM_scan_serial(benchmark::State& s) { scan(s, k::serial::selective_scan_forward); }
void BM_scan_omp(benchmark::State& s) { scan(s, k::omp::selective_scan_forward); }

}  // namespace

BENCHMARK(BM_gemm_serial)->Arg(64)->Arg(256);
BENCHMARK(BM_gemm_omp)->Arg(64)->Arg(256);
BENCHMARK(BM_conv_serial)->Arg(1)->Arg(32);
BENCHMARK(BM_conv_omp)->Arg(1)->Arg(32);
BENCHMARK(BM_grid_sample_serial)->Arg(16)->Arg(64);
BENCHMARK(BM_grid_sample_omp)->Arg(16)->Arg(64);
BENCHMARK(BM_scan_serial)->Arg(256)->Arg(1024);
BENCHMARK(BM_scan_omp)->Arg(256)->Arg(1024);

BENCHMARK_MAIN();
