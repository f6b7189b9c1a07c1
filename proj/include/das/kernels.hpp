#pragma once

// Hot loops of the library, each in two flavours:
//   serial::  straightforward reference loops, kept for parity tests
//   omp::     OpenMP-parallel versions used by the autograd ops
// Every omp kernel assigns each output element to exactly one thread and
// sums in a fixed order, so results do not depend on the thread count.

#include <cstddef>
#include <span>

namespace das::kernels {

enum class Backend { serial, openmp };

Backend backend();
void set_backend(Backend b);

class BackendGuard {
public:
    explicit BackendGuard(Backend b) : previous_(backend()) { set_backend(b); }
    ~BackendGuard() { set_backend(previous_); }
    BackendGuard(const BackendGuard&) = delete;
    BackendGuard& operator=(const BackendGuard&) = delete;

private:
    Backend previous_;
};

void set_num_threads(int n);
int max_threads();

struct ConvGeometry {
    std::size_t batch, in_channels, height, width;
    std::size_t out_channels, kernel_h, kernel_w;
    std::size_t stride, padding, groups;
    std::size_t out_h() const { return (height + 2 * padding - kernel_h) / stride + 1; }
    std::size_t out_w() const { return (width + 2 * padding - kernel_w) / stride + 1; }
};

// Feature maps are B x H x W x C (channels last); coords are B x Ho x Wo x 2
// in normalized [-1,1] units, x (width) first.
struct SampleGeometry {
    std::size_t batch, height, width, channels;
    std::size_t out_h, out_w;
};

// u, delta: B x L x D; a: D x N; b, c: B x L x N; states: B x L x D x N.
struct ScanGeometry {
    std::size_t batch, length, channels, state;
};

/// Normalized coordinate to pixel coordinate, corner aligned: -1 -> 0,
/// +1 -> extent-1. Values within 1e-9 of a lattice point snap onto it so
/// that identity grids reproduce features exactly.
double to_pixel(double t, std::size_t extent);

/// (e^z - 1)/z with the 2-term series below |z| < 1e-8.
double zoh_phi(double z);

namespace serial {

// C[M,N] = A[M,K] * B[K,N]
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
// C[M,K] = A[M,N] * B[K,N]^T
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k);
// C[K,N] = A[M,K]^T * B[M,N]
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> gy,
                           std::span<const double> w, std::span<double> gx);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> gy,
                            std::span<const double> x, std::span<double> gw, std::span<double> gbias);

void grid_sample_forward(const SampleGeometry& g, std::span<const double> features,
                         std::span<const double> coords, std::span<double> out);
void grid_sample_backward(const SampleGeometry& g, std::span<const double> features,
                          std::span<const double> coords, std::span<const double> gout,
                          std::span<double> gfeatures, std::span<double> gcoords);

void selective_scan_forward(const ScanGeometry& g, std::span<const double> u,
                            std::span<const double> delta, std::span<const double> a,
                            std::span<const double> b, std::span<const double> c,
                            std::span<double> y, std::span<double> states);
void selective_scan_backward(const ScanGeometry& g, std::span<const double> u,
                             std::span<const double> delta, std::span<const double> a,
                             std::span<const double> b, std::span<const double> c,
                             std::span<const double> states, std::span<const double> gy,
                             std::span<double> gu, std::span<double> gdelta, std::span<double> ga,
                             std::span<double> gb, std::span<double> gc);

}  // namespace serial

namespace omp {

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> gy,
                           std::span<const double> w, std::span<double> gx);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> gy,
                            std::span<const double> x, std::span<double> gw, std::span<double> gbias);

void grid_sample_forward(const SampleGeometry& g, std::span<const double> features,
                         std::span<const double> coords, std::span<double> out);
void grid_sample_backward(const SampleGeometry& g, std::span<const double> features,
                          std::span<const double> coords, std::span<const double> gout,
                          std::span<double> gfeatures, std::span<double> gcoords);

void selective_scan_forward(const ScanGeometry& g, std::span<const double> u,
                            std::span<const double> delta, std::span<const double> a,
                            std::span<const double> b, std::span<const double> c,
                            std::span<double> y, std::span<double> states);
void selective_scan_backward(const ScanGeometry& g, std::span<const double> u,
                             std::span<const double> delta, std::span<const double> a,
                             std::span<const double> b, std::span<const double> c,
                             std::span<const double> states, std::span<const double> gy,
                             std::span<double> gu, std::span<double> gdelta, std::span<double> ga,
                             std::span<double> gb, std::span<double> gc);

}  // namespace omp

// Dispatch on backend(). Outputs are overwritten (not accumulated).
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t n, std::size_t k);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n);
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<const double> bias, std::span<double> y);
void conv2d_backward_input(const ConvGeometry& g, std::span<const double> gy,
                           std::span<const double> w, std::span<double> gx);
void conv2d_backward_weight(const ConvGeometry& g, std::span<const double> gy,
                            std::span<const double> x, std::span<double> gw, std::span<double> gbias);
void grid_sample_forward(const SampleGeometry& g, std::span<const double> features,
                         std::span<const double> coords, std::span<double> out);
void grid_sample_backward(const SampleGeometry& g, std::span<const double> features,
                          std::span<const double> coords, std::span<const double> gout,
                          std::span<double> gfeatures, std::span<double> gcoords);
void selective_scan_forward(const ScanGeometry& g, std::span<const double> u,
                            std::span<const double> delta, std::span<const double> a,
                            std::span<const double> b, std::span<const double> c,
                            std::span<double> y, std::span<double> states);
void selective_scan_backward(const ScanGeometry& g, std::span<const double> u,
                             std::span<const double> delta, std::span<const double> a,
                             std::span<const double> b, std::span<const double> c,
                             std::span<const double> states, std::span<const double> gy,
                             std::span<double> gu, std::span<double> gdelta, std::span<double> ga,
                             std::span<double> gb, std::span<double> gc);

}  // namespace das::kernels
