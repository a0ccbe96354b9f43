#include "endoir/tensor/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <vector>

namespace endoir::kernels {

namespace {
std::atomic<Exec> g_default_exec{Exec::Parallel};

// Output positions o in [lo, hi] whose input tap o*stride + k - pad lands in [0, in).
inline void valid_range(std::int64_t k, std::int64_t stride, std::int64_t pad, std::int64_t in,
                        std::int64_t out, std::int64_t& lo, std::int64_t& hi) {
  const std::int64_t first = pad - k;
  lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const std::int64_t last = in - 1 + pad - k;
  hi = last < 0 ? -1 : std::min(out - 1, last / stride);
}
}  // namespace

Exec default_exec() { return g_default_exec.load(); }
void set_default_exec(Exec exec) { g_default_exec.store(exec); }

std::int64_t ConvGeometry::macs() const {
  const std::int64_t per_out = (depthwise ? 1 : in_channels) * kernel_h * kernel_w;
  return batch * out_channels * out_h * out_w * per_out;
}

// --- conv2d forward -----------------------------------------------------------

static void conv2d_forward_serial(const ConvGeometry& g, const double* in, const double* w,
                                  const double* bias, double* out) {
  const auto C = g.in_channels, H = g.height, W = g.width, O = g.out_channels;
  const auto KH = g.kernel_h, KW = g.kernel_w, OH = g.out_h, OW = g.out_w;
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          double acc = bias ? bias[o] : 0.0;
          const std::int64_t c0 = g.depthwise ? o : 0;
          const std::int64_t c1 = g.depthwise ? o + 1 : C;
          for (std::int64_t c = c0; c < c1; ++c)
            for (std::int64_t ky = 0; ky < KH; ++ky)
              for (std::int64_t kx = 0; kx < KW; ++kx) {
                const std::int64_t iy = oy * g.stride + ky - g.padding;
                const std::int64_t ix = ox * g.stride + kx - g.padding;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                const std::int64_t wc = g.depthwise ? 0 : c;
                const std::int64_t wrow = g.depthwise ? o : o * C + wc;
                acc += in[((n * C + c) * H + iy) * W + ix] * w[(wrow * KH + ky) * KW + kx];
              }
          out[((n * O + o) * OH + oy) * OW + ox] = acc;
        }
}

static void conv2d_forward_parallel(const ConvGeometry& g, const double* in, const double* w,
                                    const double* bias, double* out) {
  const auto C = g.in_channels, H = g.height, W = g.width, O = g.out_channels;
  const auto KH = g.kernel_h, KW = g.kernel_w, OH = g.out_h, OW = g.out_w;
  const auto S = g.stride, P = g.padding;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t o = 0; o < O; ++o) {
      double* op = out + (n * O + o) * OH * OW;
      std::fill(op, op + OH * OW, bias ? bias[o] : 0.0);
      const std::int64_t c0 = g.depthwise ? o : 0;
      const std::int64_t c1 = g.depthwise ? o + 1 : C;
      for (std::int64_t c = c0; c < c1; ++c) {
        const double* ip = in + (n * C + c) * H * W;
        const double* wp = w + (g.depthwise ? o : o * C + c) * KH * KW;
        for (std::int64_t ky = 0; ky < KH; ++ky) {
          std::int64_t ylo, yhi;
          valid_range(ky, S, P, H, OH, ylo, yhi);
          for (std::int64_t kx = 0; kx < KW; ++kx) {
            std::int64_t xlo, xhi;
            valid_range(kx, S, P, W, OW, xlo, xhi);
            const double wv = wp[ky * KW + kx];
            for (std::int64_t oy = ylo; oy <= yhi; ++oy) {
              const std::int64_t base = (oy * S + ky - P) * W + kx - P;
              double* orow = op + oy * OW;
              if (S == 1) {
                for (std::int64_t ox = xlo; ox <= xhi; ++ox) orow[ox] += wv * ip[base + ox];
              } else {
                for (std::int64_t ox = xlo; ox <= xhi; ++ox) orow[ox] += wv * ip[base + ox * S];
              }
            }
          }
        }
      }
    }
}

void conv2d_forward(const ConvGeometry& g, const double* in, const double* w, const double* bias,
                    double* out, Exec exec) {
  if (exec == Exec::Serial)
    conv2d_forward_serial(g, in, w, bias, out);
  else
    conv2d_forward_parallel(g, in, w, bias, out);
}

// --- conv2d backward (input) --------------------------------------------------

static void conv2d_backward_input_serial(const ConvGeometry& g, const double* gout, const double* w,
                                         double* gin) {
  const auto C = g.in_channels, H = g.height, W = g.width, O = g.out_channels;
  const auto KH = g.kernel_h, KW = g.kernel_w, OH = g.out_h, OW = g.out_w;
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          const double go = gout[((n * O + o) * OH + oy) * OW + ox];
          const std::int64_t c0 = g.depthwise ? o : 0;
          const std::int64_t c1 = g.depthwise ? o + 1 : C;
          for (std::int64_t c = c0; c < c1; ++c)
            for (std::int64_t ky = 0; ky < KH; ++ky)
              for (std::int64_t kx = 0; kx < KW; ++kx) {
                const std::int64_t iy = oy * g.stride + ky - g.padding;
                const std::int64_t ix = ox * g.stride + kx - g.padding;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                const std::int64_t wrow = g.depthwise ? o : o * C + c;
                gin[((n * C + c) * H + iy) * W + ix] += go * w[(wrow * KH + ky) * KW + kx];
              }
        }
}

static void conv2d_backward_input_parallel(const ConvGeometry& g, const double* gout, const double* w,
                                           double* gin) {
  const auto C = g.in_channels, H = g.height, W = g.width, O = g.out_channels;
  const auto KH = g.kernel_h, KW = g.kernel_w, OH = g.out_h, OW = g.out_w;
  const auto S = g.stride, P = g.padding;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      double* gp = gin + (n * C + c) * H * W;
      const std::int64_t o0 = g.depthwise ? c : 0;
      const std::int64_t o1 = g.depthwise ? c + 1 : O;
      for (std::int64_t o = o0; o < o1; ++o) {
        const double* gop = gout + (n * O + o) * OH * OW;
        const double* wp = w + (g.depthwise ? o : o * C + c) * KH * KW;
        for (std::int64_t ky = 0; ky < KH; ++ky) {
          std::int64_t ylo, yhi;
          valid_range(ky, S, P, H, OH, ylo, yhi);
          for (std::int64_t kx = 0; kx < KW; ++kx) {
            std::int64_t xlo, xhi;
            valid_range(kx, S, P, W, OW, xlo, xhi);
            const double wv = wp[ky * KW + kx];
            for (std::int64_t oy = ylo; oy <= yhi; ++oy) {
              const std::int64_t base = (oy * S + ky - P) * W + kx - P;
              const double* grow = gop + oy * OW;
              if (S == 1) {
                for (std::int64_t ox = xlo; ox <= xhi; ++ox) gp[base + ox] += wv * grow[ox];
              } else {
                for (std::int64_t ox = xlo; ox <= xhi; ++ox) gp[base + ox * S] += wv * grow[ox];
              }
            }
          }
        }
      }
    }
}

void conv2d_backward_input(const ConvGeometry& g, const double* gout, const double* w, double* gin,
                           Exec exec) {
  if (exec == Exec::Serial)
    conv2d_backward_input_serial(g, gout, w, gin);
  else
    conv2d_backward_input_parallel(g, gout, w, gin);
}

// --- conv2d backward (weight, bias) -------------------------------------------

static void conv2d_backward_weight_serial(const ConvGeometry& g, const double* gout, const double* in,
                                          double* gw, double* gb) {
  const auto C = g.in_channels, H = g.height, W = g.width, O = g.out_channels;
  const auto KH = g.kernel_h, KW = g.kernel_w, OH = g.out_h, OW = g.out_w;
  for (std::int64_t n = 0; n < g.batch; ++n)
    for (std::int64_t o = 0; o < O; ++o)
      for (std::int64_t oy = 0; oy < OH; ++oy)
        for (std::int64_t ox = 0; ox < OW; ++ox) {
          const double go = gout[((n * O + o) * OH + oy) * OW + ox];
          if (gb) gb[o] += go;
          const std::int64_t c0 = g.depthwise ? o : 0;
          const std::int64_t c1 = g.depthwise ? o + 1 : C;
          for (std::int64_t c = c0; c < c1; ++c)
            for (std::int64_t ky = 0; ky < KH; ++ky)
              for (std::int64_t kx = 0; kx < KW; ++kx) {
                const std::int64_t iy = oy * g.stride + ky - g.padding;
                const std::int64_t ix = ox * g.stride + kx - g.padding;
                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                const std::int64_t wrow = g.depthwise ? o : o * C + c;
                gw[(wrow * KH + ky) * KW + kx] += go * in[((n * C + c) * H + iy) * W + ix];
              }
        }
}

static void conv2d_backward_weight_parallel(const ConvGeometry& g, const double* gout, const double* in,
                                            double* gw, double* gb) {
  const auto C = g.in_channels, H = g.height, W = g.width, O = g.out_channels;
  const auto KH = g.kernel_h, KW = g.kernel_w, OH = g.out_h, OW = g.out_w;
  const auto S = g.stride, P = g.padding;
  const std::int64_t groups = g.depthwise ? 1 : C;
#pragma omp parallel for collapse(2) schedule(static)
  for (std::int64_t o = 0; o < O; ++o)
    for (std::int64_t cg = 0; cg < groups; ++cg) {
      const std::int64_t c = g.depthwise ? o : cg;
      if (gb && cg == 0) {
        double acc = 0.0;
        for (std::int64_t n = 0; n < g.batch; ++n) {
          const double* gop = gout + (n * O + o) * OH * OW;
          for (std::int64_t i = 0; i < OH * OW; ++i) acc += gop[i];
        }
        gb[o] += acc;
      }
      double* wp = gw + (g.depthwise ? o : o * C + c) * KH * KW;
      for (std::int64_t ky = 0; ky < KH; ++ky) {
        std::int64_t ylo, yhi;
        valid_range(ky, S, P, H, OH, ylo, yhi);
        for (std::int64_t kx = 0; kx < KW; ++kx) {
          std::int64_t xlo, xhi;
          valid_range(kx, S, P, W, OW, xlo, xhi);
          double acc = 0.0;
          for (std::int64_t n = 0; n < g.batch; ++n) {
            const double* ip = in + (n * C + c) * H * W;
            const double* gop = gout + (n * O + o) * OH * OW;
            for (std::int64_t oy = ylo; oy <= yhi; ++oy) {
              const std::int64_t base = (oy * S + ky - P) * W + kx - P;
              const double* grow = gop + oy * OW;
              if (S == 1) {
                for (std::int64_t ox = xlo; ox <= xhi; ++ox) acc += grow[ox] * ip[base + ox];
              } else {
                for (std::int64_t ox = xlo; ox <= xhi; ++ox) acc += grow[ox] * ip[base + ox * S];
              }
            }
          }
          wp[ky * KW + kx] += acc;
        }
      }
    }
}

void conv2d_backward_weight(const ConvGeometry& g, const double* gout, const double* in, double* gw,
                            double* gb, Exec exec) {
  if (exec == Exec::Serial)
    conv2d_backward_weight_serial(g, gout, in, gw, gb);
  else
    conv2d_backward_weight_parallel(g, gout, in, gw, gb);
}

// --- gemm -----------------------------------------------------------------------

static void gemm_serial(const GemmShape& s, const double* a, const double* b, double* c, bool accumulate) {
  for (std::int64_t bi = 0; bi < s.batch; ++bi) {
    const double* A = a + bi * s.m * s.k;
    const double* B = b + bi * s.k * s.n;
    double* Cm = c + bi * s.m * s.n;
    for (std::int64_t i = 0; i < s.m; ++i)
      for (std::int64_t j = 0; j < s.n; ++j) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < s.k; ++k) {
          const double av = s.trans_a ? A[k * s.m + i] : A[i * s.k + k];
          const double bv = s.trans_b ? B[j * s.k + k] : B[k * s.n + j];
          acc += av * bv;
        }
        Cm[i * s.n + j] = accumulate ? Cm[i * s.n + j] + acc : acc;
      }
  }
}

static void gemm_parallel(const GemmShape& s, const double* a, const double* b, double* c, bool accumulate) {
  const auto M = s.m, N = s.n, K = s.k;
  // Both operands are repacked to row-major [M,K] x [K,N] so the inner loop
  // is a contiguous axpy over a row of C.
  std::vector<double> pa, pb;
  if (s.trans_a) pa.resize(static_cast<std::size_t>(M * K));
  if (s.trans_b) pb.resize(static_cast<std::size_t>(K * N));
  for (std::int64_t bi = 0; bi < s.batch; ++bi) {
    const double* A = a + bi * M * K;
    const double* B = b + bi * K * N;
    double* Cm = c + bi * M * N;
    if (s.trans_a) {
      for (std::int64_t k = 0; k < K; ++k)
        for (std::int64_t i = 0; i < M; ++i) pa[static_cast<std::size_t>(i * K + k)] = A[k * M + i];
      A = pa.data();
    }
    if (s.trans_b) {
      for (std::int64_t j = 0; j < N; ++j)
        for (std::int64_t k = 0; k < K; ++k) pb[static_cast<std::size_t>(k * N + j)] = B[j * K + k];
      B = pb.data();
    }
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < M; ++i) {
      double* crow = Cm + i * N;
      const double* arow = A + i * K;
      if (!accumulate) std::fill(crow, crow + N, 0.0);
      for (std::int64_t k = 0; k < K; ++k) {
        const double av = arow[k];
        const double* brow = B + k * N;
        for (std::int64_t j = 0; j < N; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

void gemm(const GemmShape& s, const double* a, const double* b, double* c, bool accumulate, Exec exec) {
  if (exec == Exec::Serial)
    gemm_serial(s, a, b, c, accumulate);
  else
    gemm_parallel(s, a, b, c, accumulate);
}

// --- fft ------------------------------------------------------------------------

bool is_power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

static void fft1d(std::complex<double>* x, std::int64_t n, bool inverse) {
  for (std::int64_t i = 1, j = 0; i < n; ++i) {
    std::int64_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (std::int64_t len = 2; len <= n; len <<= 1) {
    const std::int64_t half = len / 2;
    for (std::int64_t k = 0; k < half; ++k) {
      const double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(len);
      const std::complex<double> tw(std::cos(ang), std::sin(ang));
      for (std::int64_t i = 0; i < n; i += len) {
        const auto u = x[i + k];
        const auto v = x[i + k + half] * tw;
        x[i + k] = u + v;
        x[i + k + half] = u - v;
      }
    }
  }
}

void fft2_inplace(std::complex<double>* plane, std::int64_t h, std::int64_t w, bool inverse) {
  for (std::int64_t r = 0; r < h; ++r) fft1d(plane + r * w, w, inverse);
  std::vector<std::complex<double>> col(static_cast<std::size_t>(h));
  for (std::int64_t c = 0; c < w; ++c) {
    for (std::int64_t r = 0; r < h; ++r) col[static_cast<std::size_t>(r)] = plane[r * w + c];
    fft1d(col.data(), h, inverse);
    for (std::int64_t r = 0; r < h; ++r) plane[r * w + c] = col[static_cast<std::size_t>(r)];
  }
}

}  // namespace endoir::kernels
