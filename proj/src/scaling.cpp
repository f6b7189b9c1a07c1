#include "das/scaling.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <algorithm>
#include <numeric>

#include "das/random.hpp"
#include "das/ssm.hpp"

namespace das::scaling {

void naive_attention(const double* q, const double* k, const double* v, std::size_t length, std::size_t dim,
                     double* out) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    std::vector<double> w(length);
    for (std::size_t i = 0; i < length; ++i) {
        double mx = -INFINITY;
        for (std::size_t j = 0; j < length; ++j) {
            double s = 0.0;
            for (std::size_t d = 0; d < dim; ++d) s += q[i * dim + d] * k[j * dim + d];
            w[j] = s * scale;
            mx = std::max(mx, w[j]);
        }
        double z = 0.0;
        for (auto& x : w) z += (x = std::exp(x - mx));
        double* o = out + i * dim;
        std::fill(o, o + dim, 0.0);
        for (std::size_t j = 0; j < length; ++j) {
            const double p = w[j] / z;
            for (std::size_t d = 0; d < dim; ++d) o[d] += p * v[j * dim + d];
        }
    }
}

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v));
}

template <class F>
BenchRow time_reps(const std::string& kernel, std::size_t length, std::size_t reps, F&& f) {
    f();  // warm-up
    std::vector<double> ms;
    for (std::size_t r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }
    const double mean = std::accumulate(ms.begin(), ms.end(), 0.0) / static_cast<double>(reps);
    double var = 0.0;
    for (double x : ms) var += (x - mean) * (x - mean);
    return {kernel, length, mean, reps > 1 ? std::sqrt(var / static_cast<double>(reps - 1)) : 0.0};
}

}  // namespace

std::vector<BenchRow> run_scaling_bench(const BenchOptions& o) {
    std::vector<BenchRow> rows;
    NoGradGuard guard;
    Rng rng(o.seed);
    const std::size_t D = o.channels, N = o.state;
    for (std::size_t L : o.lengths) {
        Tensor u = uniform({L, D}, rng, -1.0, 1.0), delta = uniform({L, D}, rng, 0.001, 0.1);
        Tensor a = uniform({D, N}, rng, -2.0, -0.5), b = uniform({L, N}, rng, -1.0, 1.0), c = uniform({L, N}, rng, -1.0, 1.0);
        volatile double sink = 0.0;
        rows.push_back(time_reps("selective_scan", L, o.reps, [&] { sink = sink + ssm::selective_scan(u, delta, a, b, c).data()[0]; }));
    }
    for (std::size_t L : o.lengths) {
        std::vector<double> q(L * D), k(L * D), v(L * D), out(L * D);
        for (auto* vec : {&q, &k, &v})
            for (auto& x : *vec) x = rng.uniform(-1.0, 1.0);
        rows.push_back(time_reps("attention", L, o.reps, [&] { naive_attention(q.data(), k.data(), v.data(), L, D, out.data()); }));
    }
    return rows;
}

double fit_exponent(const std::vector<std::size_t>& lengths, const std::vector<double>& times) {
    const double n = static_cast<double>(lengths.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        const double x = std::log(static_cast<double>(lengths[i])), y = std::log(times[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<BenchFit> fit_exponents(const std::vector<BenchRow>& rows) {
    std::vector<BenchFit> fits;
    std::vector<std::string> kernels;
    for (const auto& r : rows)
        if (std::find(kernels.begin(), kernels.end(), r.kernel) == kernels.end()) kernels.push_back(r.kernel);
    for (const auto& k : kernels) {
        std::vector<std::size_t> ls;
        std::vector<double> ts;
        for (const auto& r : rows)
            if (r.kernel == k) {
                ls.push_back(r.length);
                ts.push_back(r.mean_ms);
            }
        fits.push_back({k, fit_exponent(ls, ts)});
    }
    return fits;
}

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
    os << "kernel,L,mean_ms,std_ms\n";
    char buf[128];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.6f\n", r.kernel.c_str(), r.length, r.mean_ms, r.std_ms);
        os << buf;
    }
}

void write_fit_csv(std::ostream& os, const std::vector<BenchFit>& fits) {
    os << "kernel,exponent\n";
    char buf[128];
    for (const auto& f : fits) {
        std::snprintf(buf, sizeof buf, "%s,%.4f\n", f.kernel.c_str(), f.exponent);
        os << buf;
    }
}

}  // namespace das::scaling
