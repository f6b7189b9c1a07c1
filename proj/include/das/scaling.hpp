#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace das::scaling {

struct BenchOptions {
    std::vector<std::size_t> lengths{256, 512, 1024, 2048, 4096, 8192};
    std::size_t reps = 5;
    std::size_t channels = 16;  // D for the scan, head dim for attention
    std::size_t state = 16;
    std::uint64_t seed = 0;
};

struct BenchRow {
    std::string kernel;
    std::size_t length;
    double mean_ms, std_ms;
};

struct BenchFit {
    std::string kernel;
    double exponent;
};

/// Single-head softmax attention computed row by row: O(L^2 d) time.
/// q, k, v, out: L x d, row-major.
void naive_attention(const double* q, const double* k, const double* v, std::size_t length, std::size_t dim,
                     double* out);

/// Wall-clock timings of the selective scan and the attention reference;
/// one untimed warm-up per length.
std::vector<BenchRow> run_scaling_bench(const BenchOptions& options);

/// Least-squares slope of log(time) against log(length).
double fit_exponent(const std::vector<std::size_t>& lengths, const std::vector<double>& times);
std::vector<BenchFit> fit_exponents(const std::vector<BenchRow>& rows);

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);
void write_fit_csv(std::ostream& os, const std::vector<BenchFit>& fits);

}  // namespace das::scaling
