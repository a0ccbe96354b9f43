#pragma once

// Raw compute kernels behind the differentiable ops. Every kernel has two
// execution paths: `Serial` is a direct loop nest kept as the reference the
// tests compare against, `Parallel` is the OpenMP path the engine uses.
// The parallel path gives each output element to exactly one thread with a
// fixed accumulation order, so results do not depend on the thread count.

#include <complex>
#include <cstdint>

namespace endoir::kernels {

enum class Exec { Serial, Parallel };

// Default path used by ops; tests flip it to check both.
Exec default_exec();
void set_default_exec(Exec exec);

struct ConvGeometry {
  std::int64_t batch, in_channels, height, width;
  std::int64_t out_channels, kernel_h, kernel_w;
  std::int64_t stride, padding;
  std::int64_t out_h, out_w;
  // Depthwise: out_channels == in_channels and each channel has its own filter.
  bool depthwise = false;

  std::int64_t macs() const;
};

// out[N,O,OH,OW] = bias + cross-correlation(in, w). Overwrites out.
void conv2d_forward(const ConvGeometry& g, const double* in, const double* w, const double* bias,
                    double* out, Exec exec);
// gin += dL/din
void conv2d_backward_input(const ConvGeometry& g, const double* gout, const double* w, double* gin,
                           Exec exec);
// gw += dL/dw, gb += dL/db (gb may be null)
void conv2d_backward_weight(const ConvGeometry& g, const double* gout, const double* in, double* gw,
                            double* gb, Exec exec);

struct GemmShape {
  std::int64_t batch, m, n, k;
  bool trans_a = false;  // a stored [k,m] instead of [m,k]
  bool trans_b = false;  // b stored [n,k] instead of [k,n]
};

// c[b] (+)= op(a[b]) * op(b[b]); c is [m,n] row-major per batch item.
void gemm(const GemmShape& s, const double* a, const double* b, double* c, bool accumulate, Exec exec);

// In-place 2-D radix-2 transform of an h x w complex plane. Unnormalized in
// both directions; the caller scales the inverse.
void fft2_inplace(std::complex<double>* plane, std::int64_t h, std::int64_t w, bool inverse);
bool is_power_of_two(std::int64_t v);

}  // namespace endoir::kernels
