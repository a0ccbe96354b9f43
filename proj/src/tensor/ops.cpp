#include "endoir/tensor/ops.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <string>

#include "endoir/tensor/kernels.hpp"
#include "endoir/tensor/profile.hpp"

namespace endoir {

using detail::accumulate_grad;
using detail::recording_tape;
using std::int64_t;

namespace {

int normalize_dim(int dim, int rank, const char* op) {
  const int d = dim < 0 ? dim + rank : dim;
  if (d < 0 || d >= rank) {
    throw ShapeError(std::string(op) + ": dim " + std::to_string(dim) + " out of range for rank " +
                     std::to_string(rank));
  }
  return d;
}

// outer x len x inner decomposition around one dim.
struct Split {
  int64_t outer = 1, len = 1, inner = 1;
};

Split split_at(const Shape& s, int d) {
  Split r;
  for (int i = 0; i < d; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.len = s[static_cast<std::size_t>(d)];
  for (std::size_t i = static_cast<std::size_t>(d) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

struct Broadcast {
  Shape out;
  std::vector<int64_t> stride_a, stride_b;
  bool same = false;
};

std::vector<int64_t> aligned_strides(const Shape& s, std::size_t rank) {
  std::vector<int64_t> st(rank, 0);
  int64_t acc = 1;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const std::size_t src = s.size() - 1 - i;
    const std::size_t dst = rank - 1 - i;
    st[dst] = s[src] == 1 ? 0 : acc;
    acc *= s[src];
  }
  return st;
}

Broadcast broadcast(const Shape& a, const Shape& b, const char* op) {
  Broadcast bc;
  bc.same = a == b;
  const std::size_t r = std::max(a.size(), b.size());
  bc.out.assign(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    bc.out[i] = std::max(da, db);
  }
  bc.stride_a = aligned_strides(a, r);
  bc.stride_b = aligned_strides(b, r);
  return bc;
}

// f(out_index, a_index, b_index) for every output element.
template <class F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const int64_t total = shape_numel(bc.out);
  if (bc.same) {
    for (int64_t i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  const std::size_t r = bc.out.size();
  std::vector<int64_t> idx(r, 0);
  const int64_t inner = bc.out[r - 1];
  const int64_t sa = bc.stride_a[r - 1], sb = bc.stride_b[r - 1];
  int64_t oi = 0, abase = 0, bbase = 0;
  while (oi < total) {
    for (int64_t j = 0; j < inner; ++j) f(oi + j, abase + j * sa, bbase + j * sb);
    oi += inner;
    for (int d = static_cast<int>(r) - 2; d >= 0; --d) {
      const auto ud = static_cast<std::size_t>(d);
      ++idx[ud];
      abase += bc.stride_a[ud];
      bbase += bc.stride_b[ud];
      if (idx[ud] < bc.out[ud]) break;
      abase -= bc.stride_a[ud] * bc.out[ud];
      bbase -= bc.stride_b[ud] * bc.out[ud];
      idx[ud] = 0;
    }
  }
}

enum class Binary { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  const Broadcast bc = broadcast(a.shape(), b.shape(), name);
  Tensor out(bc.out);
  auto od = out.data_mut();
  const auto ad = a.data();
  const auto bd = b.data();
  switch (kind) {
    case Binary::Add:
      for_each_broadcast(bc, [&](int64_t o, int64_t i, int64_t j) { od[o] = ad[i] + bd[j]; });
      break;
    case Binary::Sub:
      for_each_broadcast(bc, [&](int64_t o, int64_t i, int64_t j) { od[o] = ad[i] - bd[j]; });
      break;
    case Binary::Mul:
      for_each_broadcast(bc, [&](int64_t o, int64_t i, int64_t j) { od[o] = ad[i] * bd[j]; });
      break;
  }
  if (auto* tape = recording_tape({&a, &b})) {
    detail::record(tape, name, out, [a, b, bc, kind](std::span<const double> g) {
      std::vector<double> ga(a.requires_grad() ? a.data().size() : 0, 0.0);
      std::vector<double> gb(b.requires_grad() ? b.data().size() : 0, 0.0);
      const auto ad = a.data();
      const auto bd = b.data();
      const bool wa = !ga.empty(), wb = !gb.empty();
      for_each_broadcast(bc, [&](int64_t o, int64_t i, int64_t j) {
        switch (kind) {
          case Binary::Add:
            if (wa) ga[i] += g[o];
            if (wb) gb[j] += g[o];
            break;
          case Binary::Sub:
            if (wa) ga[i] += g[o];
            if (wb) gb[j] -= g[o];
            break;
          case Binary::Mul:
            if (wa) ga[i] += g[o] * bd[j];
            if (wb) gb[j] += g[o] * ad[i];
            break;
        }
      });
      if (wa) accumulate_grad(a, ga);
      if (wb) accumulate_grad(b, gb);
    });
  }
  return out;
}

// Unary elementwise op with derivative computed from (x, y).
template <class Fwd, class Deriv>
Tensor unary_op(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  auto od = out.data_mut();
  const auto xd = x.data();
  for (std::size_t i = 0; i < xd.size(); ++i) od[i] = fwd(xd[i]);
  if (auto* tape = recording_tape({&x})) {
    Tensor y = out;
    detail::record(tape, name, out, [x, y, deriv](std::span<const double> g) {
      const auto xd = x.data();
      const auto yd = y.data();
      std::vector<double> gx(xd.size());
      for (std::size_t i = 0; i < xd.size(); ++i) gx[i] = g[i] * deriv(xd[i], yd[i]);
      accumulate_grad(x, gx);
    });
  }
  return out;
}

void check_unique_indices(const IndexList& idx, int64_t extent, const char* op) {
  std::vector<char> seen(static_cast<std::size_t>(extent), 0);
  for (auto i : idx) {
    if (i < 0 || i >= extent) {
      throw ValueError(std::string(op) + ": index " + std::to_string(i) + " out of range [0," +
                       std::to_string(extent) + ")");
    }
    if (seen[static_cast<std::size_t>(i)]) {
      throw ValueError(std::string(op) + ": duplicate index " + std::to_string(i));
    }
    seen[static_cast<std::size_t>(i)] = 1;
  }
}

}  // namespace

// --- elementwise ------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, Binary::Mul, "mul"); }

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op(
      a, "mul_scalar", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op(
      a, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

double gelu_scalar(double x) {
  const double u = kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

Tensor gelu(const Tensor& x) {
  return unary_op(x, "gelu", gelu_scalar, [](double v, double) {
    const double u = kGeluSqrt2OverPi * (v + kGeluCubic * v * v * v);
    const double th = std::tanh(u);
    const double du = kGeluSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * v * v);
    return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
  });
}

Tensor sqrt(const Tensor& x) {
  for (double v : x.data()) {
    if (v < 0.0) throw ValueError("sqrt of negative value");
  }
  return unary_op(
      x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor log1p(const Tensor& x) {
  return unary_op(
      x, "log1p", [](double v) { return std::log1p(v); }, [](double v, double) { return 1.0 / (1.0 + v); });
}

// --- reductions ---------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  const auto xd = x.data();
  double acc = 0.0;
  for (double v : xd) acc += v;
  Tensor out = Tensor::scalar(acc);
  if (auto* tape = recording_tape({&x})) {
    detail::record(tape, "sum", out, [x](std::span<const double> g) {
      std::vector<double> gx(x.data().size(), g[0]);
      accumulate_grad(x, gx);
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  }
  const auto p = pred.data();
  const auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  const double n = static_cast<double>(p.size());
  Tensor out = Tensor::scalar(acc / n);
  if (auto* tape = recording_tape({&pred, &target})) {
    detail::record(tape, "mse_loss", out, [pred, target, n](std::span<const double> g) {
      const auto p = pred.data();
      const auto t = target.data();
      std::vector<double> gp(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) gp[i] = g[0] * 2.0 * (p[i] - t[i]) / n;
      accumulate_grad(pred, gp);
      if (target.requires_grad()) {
        for (auto& v : gp) v = -v;
        accumulate_grad(target, gp);
      }
    });
  }
  return out;
}

// --- shape ------------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (auto* tape = recording_tape({&x})) {
    detail::record(tape, "reshape", out, [x](std::span<const double> g) { accumulate_grad(x, g); });
  }
  return out;
}

Tensor narrow(const Tensor& x, int dim, int64_t start, int64_t length) {
  const int d = normalize_dim(dim, x.rank(), "narrow");
  const Split sp = split_at(x.shape(), d);
  if (start < 0 || length <= 0 || start + length > sp.len) {
    throw ShapeError("narrow: range [" + std::to_string(start) + "," + std::to_string(start + length) +
                     ") outside extent " + std::to_string(sp.len) + " of " + shape_str(x.shape()));
  }
  Shape os = x.shape();
  os[static_cast<std::size_t>(d)] = length;
  Tensor out(os);
  auto od = out.data_mut();
  const auto xd = x.data();
  const int64_t block = length * sp.inner;
  for (int64_t o = 0; o < sp.outer; ++o) {
    std::copy_n(xd.begin() + (o * sp.len + start) * sp.inner, block, od.begin() + o * block);
  }
  if (auto* tape = recording_tape({&x})) {
    detail::record(tape, "narrow", out, [x, sp, start, block](std::span<const double> g) {
      std::vector<double> gx(x.data().size(), 0.0);
      for (int64_t o = 0; o < sp.outer; ++o) {
        std::copy_n(g.begin() + o * block, block, gx.begin() + (o * sp.len + start) * sp.inner);
      }
      accumulate_grad(x, gx);
    });
  }
  return out;
}

std::vector<Tensor> chunk(const Tensor& x, int parts, int dim) {
  const int d = normalize_dim(dim, x.rank(), "chunk");
  const int64_t len = x.size(d);
  if (parts <= 0 || len % parts != 0) {
    throw ShapeError("chunk: extent " + std::to_string(len) + " of " + shape_str(x.shape()) +
                     " not divisible into " + std::to_string(parts) + " parts");
  }
  std::vector<Tensor> out;
  const int64_t step = len / parts;
  for (int p = 0; p < parts; ++p) out.push_back(narrow(x, d, p * step, step));
  return out;
}

Tensor concat(std::span<const Tensor> xs, int dim) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const int d = normalize_dim(dim, xs[0].rank(), "concat");
  Shape os = xs[0].shape();
  int64_t total = 0;
  for (const auto& t : xs) {
    if (t.rank() != xs[0].rank()) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < t.rank(); ++i) {
      if (i != d && t.size(i) != xs[0].size(i)) {
        throw ShapeError("concat: " + shape_str(t.shape()) + " vs " + shape_str(xs[0].shape()) +
                         " along dim " + std::to_string(d));
      }
    }
    total += t.size(d);
  }
  os[static_cast<std::size_t>(d)] = total;
  Tensor out(os);
  const Split sp = split_at(os, d);
  auto od = out.data_mut();
  std::vector<int64_t> offsets;
  int64_t off = 0;
  for (const auto& t : xs) {
    offsets.push_back(off);
    const int64_t block = t.size(d) * sp.inner;
    const auto td = t.data();
    for (int64_t o = 0; o < sp.outer; ++o) {
      std::copy_n(td.begin() + o * block, block, od.begin() + (o * total + off) * sp.inner);
    }
    off += t.size(d);
  }
  std::vector<Tensor> inputs(xs.begin(), xs.end());
  if (auto* tape = recording_tape(std::span<const Tensor>(inputs))) {
    detail::record(tape, "concat", out, [inputs, offsets, sp, total, d](std::span<const double> g) {
      for (std::size_t k = 0; k < inputs.size(); ++k) {
        const auto& t = inputs[k];
        if (!t.requires_grad()) continue;
        const int64_t block = t.size(d) * sp.inner;
        std::vector<double> gt(t.data().size());
        for (int64_t o = 0; o < sp.outer; ++o) {
          std::copy_n(g.begin() + (o * total + offsets[k]) * sp.inner, block, gt.begin() + o * block);
        }
        accumulate_grad(t, gt);
      }
    });
  }
  return out;
}

Tensor concat(std::initializer_list<Tensor> xs, int dim) {
  std::vector<Tensor> v(xs);
  return concat(std::span<const Tensor>(v), dim);
}

Tensor index_select(const Tensor& x, int dim, const IndexList& idx) {
  const int d = normalize_dim(dim, x.rank(), "index_select");
  const Split sp = split_at(x.shape(), d);
  if (idx.empty()) throw ValueError("index_select: empty index list");
  check_unique_indices(idx, sp.len, "index_select");
  Shape os = x.shape();
  const auto k = static_cast<int64_t>(idx.size());
  os[static_cast<std::size_t>(d)] = k;
  Tensor out(os);
  auto od = out.data_mut();
  const auto xd = x.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t j = 0; j < k; ++j) {
      std::copy_n(xd.begin() + (o * sp.len + idx[static_cast<std::size_t>(j)]) * sp.inner, sp.inner,
                  od.begin() + (o * k + j) * sp.inner);
    }
  if (auto* tape = recording_tape({&x})) {
    detail::record(tape, "index_select", out, [x, idx, sp, k](std::span<const double> g) {
      std::vector<double> gx(x.data().size(), 0.0);
      for (int64_t o = 0; o < sp.outer; ++o)
        for (int64_t j = 0; j < k; ++j) {
          const int64_t src = (o * k + j) * sp.inner;
          const int64_t dst = (o * sp.len + idx[static_cast<std::size_t>(j)]) * sp.inner;
          for (int64_t i = 0; i < sp.inner; ++i) gx[static_cast<std::size_t>(dst + i)] += g[src + i];
        }
      accumulate_grad(x, gx);
    });
  }
  return out;
}

Tensor index_scatter(const Tensor& base, const Tensor& payload, int dim, const IndexList& idx) {
  const int d = normalize_dim(dim, base.rank(), "index_scatter");
  const Split sp = split_at(base.shape(), d);
  check_unique_indices(idx, sp.len, "index_scatter");
  const auto k = static_cast<int64_t>(idx.size());
  Shape expect = base.shape();
  expect[static_cast<std::size_t>(d)] = k;
  if (payload.shape() != expect) {
    throw ShapeError("index_scatter: payload " + shape_str(payload.shape()) + " does not match " +
                     shape_str(expect));
  }
  Tensor out = base.clone();
  auto od = out.data_mut();
  const auto pd = payload.data();
  for (int64_t o = 0; o < sp.outer; ++o)
    for (int64_t j = 0; j < k; ++j) {
      std::copy_n(pd.begin() + (o * k + j) * sp.inner, sp.inner,
                  od.begin() + (o * sp.len + idx[static_cast<std::size_t>(j)]) * sp.inner);
    }
  if (auto* tape = recording_tape({&base, &payload})) {
    detail::record(tape, "index_scatter", out, [base, payload, idx, sp, k](std::span<const double> g) {
      if (base.requires_grad()) {
        std::vector<double> gb(g.begin(), g.end());
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t j = 0; j < k; ++j) {
            auto it = gb.begin() + (o * sp.len + idx[static_cast<std::size_t>(j)]) * sp.inner;
            std::fill(it, it + sp.inner, 0.0);
          }
        accumulate_grad(base, gb);
      }
      if (payload.requires_grad()) {
        std::vector<double> gp(payload.data().size());
        for (int64_t o = 0; o < sp.outer; ++o)
          for (int64_t j = 0; j < k; ++j) {
            std::copy_n(g.begin() + (o * sp.len + idx[static_cast<std::size_t>(j)]) * sp.inner, sp.inner,
                        gp.begin() + (o * k + j) * sp.inner);
          }
        accumulate_grad(payload, gp);
      }
    });
  }
  return out;
}

Tensor gather_channels(const Tensor& x, const IndexList& idx) {
  if (x.rank() != 4) throw ShapeError("gather_channels expects [N,C,H,W], got " + shape_str(x.shape()));
  return index_select(x, 1, idx);
}

Tensor scatter_channels(const Tensor& payload, const IndexList& idx, const Tensor& base) {
  if (base.rank() != 4) throw ShapeError("scatter_channels expects [N,C,H,W], got " + shape_str(base.shape()));
  return index_scatter(base, payload, 1, idx);
}

// --- matmul / linear --------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw ShapeError("matmul: unsupported ranks " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const bool batched = a.rank() == 3;
  const int64_t batch = batched ? a.size(0) : 1;
  if (batched && b.size(0) != batch) {
    throw ShapeError("matmul: batch mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const int64_t a0 = a.size(-2), a1 = a.size(-1), b0 = b.size(-2), b1 = b.size(-1);
  const int64_t m = trans_a ? a1 : a0, ka = trans_a ? a0 : a1;
  const int64_t kb = trans_b ? b1 : b0, n = trans_b ? b0 : b1;
  if (ka != kb) {
    throw ShapeError("matmul: inner dims differ " + shape_str(a.shape()) + (trans_a ? "^T" : "") + " x " +
                     shape_str(b.shape()) + (trans_b ? "^T" : ""));
  }
  Shape os = batched ? Shape{batch, m, n} : Shape{m, n};
  Tensor out(os);
  const kernels::GemmShape gs{batch, m, n, ka, trans_a, trans_b};
  kernels::gemm(gs, a.data().data(), b.data().data(), out.data_mut().data(), false, kernels::default_exec());
  detail::record_macs("matmul", a.shape(), os, batch * m * n * ka);
  if (auto* tape = recording_tape({&a, &b})) {
    detail::record(tape, "matmul", out, [a, b, gs](std::span<const double> g) {
      const auto exec = kernels::default_exec();
      const int64_t M = gs.m, N = gs.n, K = gs.k;
      if (a.requires_grad()) {
        std::vector<double> ga(a.data().size(), 0.0);
        if (!gs.trans_a) {  // dA[M,K] = dC * op(B)^T
          kernels::gemm({gs.batch, M, K, N, false, !gs.trans_b}, g.data(), b.data().data(), ga.data(), false,
                        exec);
        } else {  // dA[K,M] = op(B) * dC^T
          kernels::gemm({gs.batch, K, M, N, gs.trans_b, true}, b.data().data(), g.data(), ga.data(), false,
                        exec);
        }
        accumulate_grad(a, ga);
      }
      if (b.requires_grad()) {
        std::vector<double> gb(b.data().size(), 0.0);
        if (!gs.trans_b) {  // dB[K,N] = op(A)^T * dC
          kernels::gemm({gs.batch, K, N, M, !gs.trans_a, false}, a.data().data(), g.data(), gb.data(), false,
                        exec);
        } else {  // dB[N,K] = dC^T * op(A)
          kernels::gemm({gs.batch, N, K, M, true, gs.trans_a}, g.data(), a.data().data(), gb.data(), false,
                        exec);
        }
        accumulate_grad(b, gb);
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2 || w.rank() != 2 || x.size(1) != w.size(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(w.shape()));
  }
  Tensor y = matmul(x, w, false, true);
  if (!b.defined()) return y;
  if (b.rank() != 1 || b.size(0) != w.size(0)) {
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " vs weight " + shape_str(w.shape()));
  }
  return add(y, b);
}

// --- convolution ------------------------------------------------------------------------

namespace {

Tensor conv_common(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding,
                   bool depthwise) {
  const char* name = depthwise ? "depthwise_conv2d" : "conv2d";
  if (input.rank() != 4 || kernel.rank() != 4) {
    throw ShapeError(std::string(name) + ": input " + shape_str(input.shape()) + " and kernel " +
                     shape_str(kernel.shape()) + " must both be rank 4");
  }
  if (stride <= 0) throw ValueError(std::string(name) + ": stride must be positive, got " + std::to_string(stride));
  if (padding < 0) throw ValueError(std::string(name) + ": padding must be non-negative");
  kernels::ConvGeometry g{};
  g.batch = input.size(0);
  g.in_channels = input.size(1);
  g.height = input.size(2);
  g.width = input.size(3);
  g.out_channels = kernel.size(0);
  g.kernel_h = kernel.size(2);
  g.kernel_w = kernel.size(3);
  g.stride = stride;
  g.padding = padding;
  g.depthwise = depthwise;
  const bool channels_ok = depthwise ? (kernel.size(1) == 1 && kernel.size(0) == g.in_channels)
                                     : kernel.size(1) == g.in_channels;
  if (!channels_ok) {
    throw ShapeError(std::string(name) + ": channel mismatch between input " + shape_str(input.shape()) +
                     " and kernel " + shape_str(kernel.shape()));
  }
  if (g.kernel_h > g.height + 2 * padding || g.kernel_w > g.width + 2 * padding) {
    throw ShapeError(std::string(name) + ": kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                     shape_str(input.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.size(0) != g.out_channels)) {
    throw ShapeError(std::string(name) + ": bias " + shape_str(bias.shape()) + " vs kernel " +
                     shape_str(kernel.shape()));
  }
  g.out_h = (g.height + 2 * padding - g.kernel_h) / stride + 1;
  g.out_w = (g.width + 2 * padding - g.kernel_w) / stride + 1;
  Shape os{g.batch, g.out_channels, g.out_h, g.out_w};
  Tensor out(os);
  kernels::conv2d_forward(g, input.data().data(), kernel.data().data(),
                          bias.defined() ? bias.data().data() : nullptr, out.data_mut().data(),
                          kernels::default_exec());
  detail::record_macs(name, input.shape(), os, g.macs());
  if (auto* tape = recording_tape({&input, &kernel, &bias})) {
    detail::record(tape, name, out, [input, kernel, bias, g](std::span<const double> gout) {
      const auto exec = kernels::default_exec();
      if (input.requires_grad()) {
        std::vector<double> gi(input.data().size(), 0.0);
        kernels::conv2d_backward_input(g, gout.data(), kernel.data().data(), gi.data(), exec);
        accumulate_grad(input, gi);
      }
      const bool wk = kernel.requires_grad();
      const bool wb = bias.defined() && bias.requires_grad();
      if (wk || wb) {
        std::vector<double> gw(kernel.data().size(), 0.0);
        std::vector<double> gb(static_cast<std::size_t>(g.out_channels), 0.0);
        kernels::conv2d_backward_weight(g, gout.data(), input.data().data(), gw.data(), gb.data(), exec);
        if (wk) accumulate_grad(kernel, gw);
        if (wb) accumulate_grad(bias, gb);
      }
    });
  }
  return out;
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int stride, int padding) {
  return conv_common(input, kernel, bias, stride, padding, false);
}

Tensor depthwise_conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias, int padding) {
  return conv_common(input, kernel, bias, 1, padding, true);
}

// --- normalization / softmax -------------------------------------------------------------

Tensor layer_norm(const Tensor& input, std::span<const int> dims, const Tensor& gain, const Tensor& shift,
                  double eps) {
  if (!(eps > 0.0)) throw ValueError("layer_norm: eps must be > 0, got " + std::to_string(eps));
  if (dims.empty()) throw ValueError("layer_norm: no dims to normalize");
  std::vector<int> ds;
  for (int d : dims) ds.push_back(normalize_dim(d, input.rank(), "layer_norm"));
  std::sort(ds.begin(), ds.end());
  for (std::size_t i = 1; i < ds.size(); ++i) {
    if (ds[i] != ds[i - 1] + 1) throw ValueError("layer_norm: normalized dims must be contiguous");
  }
  const auto& s = input.shape();
  int64_t outer = 1, group = 1, inner = 1;
  for (int i = 0; i < ds.front(); ++i) outer *= s[static_cast<std::size_t>(i)];
  for (int d : ds) group *= s[static_cast<std::size_t>(d)];
  for (std::size_t i = static_cast<std::size_t>(ds.back()) + 1; i < s.size(); ++i) inner *= s[i];
  if (gain.numel() != group || shift.numel() != group) {
    throw ShapeError("layer_norm: gain " + shape_str(gain.shape()) + " / shift " + shape_str(shift.shape()) +
                     " must hold " + std::to_string(group) + " values for input " + shape_str(s));
  }
  Tensor out(s);
  std::vector<double> xhat(input.data().size());
  std::vector<double> rstd(static_cast<std::size_t>(outer * inner));
  const auto xd = input.data();
  const auto gd = gain.data();
  const auto bd = shift.data();
  auto od = out.data_mut();
  std::vector<double> mu(static_cast<std::size_t>(inner)), var(static_cast<std::size_t>(inner));
  const double inv_g = 1.0 / static_cast<double>(group);
  for (int64_t o = 0; o < outer; ++o) {
    const int64_t base = o * group * inner;
    std::fill(mu.begin(), mu.end(), 0.0);
    std::fill(var.begin(), var.end(), 0.0);
    for (int64_t gi = 0; gi < group; ++gi)
      for (int64_t i = 0; i < inner; ++i) mu[static_cast<std::size_t>(i)] += xd[base + gi * inner + i];
    for (auto& m : mu) m *= inv_g;
    for (int64_t gi = 0; gi < group; ++gi)
      for (int64_t i = 0; i < inner; ++i) {
        const double dlt = xd[base + gi * inner + i] - mu[static_cast<std::size_t>(i)];
        var[static_cast<std::size_t>(i)] += dlt * dlt;
      }
    for (int64_t i = 0; i < inner; ++i) {
      rstd[static_cast<std::size_t>(o * inner + i)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(i)] * inv_g + eps);
    }
    for (int64_t gi = 0; gi < group; ++gi)
      for (int64_t i = 0; i < inner; ++i) {
        const int64_t at = base + gi * inner + i;
        const double xh = (xd[at] - mu[static_cast<std::size_t>(i)]) * rstd[static_cast<std::size_t>(o * inner + i)];
        xhat[static_cast<std::size_t>(at)] = xh;
        od[at] = gd[gi] * xh + bd[gi];
      }
  }
  if (auto* tape = recording_tape({&input, &gain, &shift})) {
    detail::record(tape, "layer_norm", out,
                   [input, gain, shift, xhat = std::move(xhat), rstd = std::move(rstd), outer, group,
                    inner](std::span<const double> g) {
                     const auto gd = gain.data();
                     std::vector<double> gx(input.requires_grad() ? input.data().size() : 0, 0.0);
                     std::vector<double> gg(static_cast<std::size_t>(group), 0.0), gs(static_cast<std::size_t>(group), 0.0);
                     std::vector<double> m1(static_cast<std::size_t>(inner)), m2(static_cast<std::size_t>(inner));
                     const double inv_g = 1.0 / static_cast<double>(group);
                     for (int64_t o = 0; o < outer; ++o) {
                       const int64_t base = o * group * inner;
                       std::fill(m1.begin(), m1.end(), 0.0);
                       std::fill(m2.begin(), m2.end(), 0.0);
                       for (int64_t gi = 0; gi < group; ++gi)
                         for (int64_t i = 0; i < inner; ++i) {
                           const int64_t at = base + gi * inner + i;
                           const double dxh = g[at] * gd[gi];
                           m1[static_cast<std::size_t>(i)] += dxh;
                           m2[static_cast<std::size_t>(i)] += dxh * xhat[static_cast<std::size_t>(at)];
                           gg[static_cast<std::size_t>(gi)] += g[at] * xhat[static_cast<std::size_t>(at)];
                           gs[static_cast<std::size_t>(gi)] += g[at];
                         }
                       if (gx.empty()) continue;
                       for (int64_t gi = 0; gi < group; ++gi)
                         for (int64_t i = 0; i < inner; ++i) {
                           const int64_t at = base + gi * inner + i;
                           const double dxh = g[at] * gd[gi];
                           gx[static_cast<std::size_t>(at)] =
                               rstd[static_cast<std::size_t>(o * inner + i)] *
                               (dxh - m1[static_cast<std::size_t>(i)] * inv_g -
                                xhat[static_cast<std::size_t>(at)] * m2[static_cast<std::size_t>(i)] * inv_g);
                         }
                     }
                     if (!gx.empty()) accumulate_grad(input, gx);
                     accumulate_grad(gain, gg);
                     accumulate_grad(shift, gs);
                   });
  }
  return out;
}

Tensor layer_norm(const Tensor& input, std::initializer_list<int> dims, const Tensor& gain, const Tensor& shift,
                  double eps) {
  std::vector<int> v(dims);
  return layer_norm(input, std::span<const int>(v), gain, shift, eps);
}

Tensor softmax(const Tensor& input, int dim) {
  const int d = normalize_dim(dim, input.rank(), "softmax");
  const Split sp = split_at(input.shape(), d);
  Tensor out(input.shape());
  const auto xd = input.data();
  auto od = out.data_mut();
  std::vector<double> mx(static_cast<std::size_t>(sp.inner)), den(static_cast<std::size_t>(sp.inner));
  for (int64_t o = 0; o < sp.outer; ++o) {
    const int64_t base = o * sp.len * sp.inner;
    if (sp.inner == 1) {
      const double* row = xd.data() + base;
      double* orow = od.data() + base;
      double m = row[0];
      for (int64_t j = 1; j < sp.len; ++j) m = std::max(m, row[j]);
      double s = 0.0;
      for (int64_t j = 0; j < sp.len; ++j) {
        orow[j] = std::exp(row[j] - m);
        s += orow[j];
      }
      const double inv = 1.0 / s;
      for (int64_t j = 0; j < sp.len; ++j) orow[j] *= inv;
      continue;
    }
    std::copy_n(xd.begin() + base, sp.inner, mx.begin());
    for (int64_t j = 1; j < sp.len; ++j)
      for (int64_t i = 0; i < sp.inner; ++i)
        mx[static_cast<std::size_t>(i)] = std::max(mx[static_cast<std::size_t>(i)], xd[base + j * sp.inner + i]);
    std::fill(den.begin(), den.end(), 0.0);
    for (int64_t j = 0; j < sp.len; ++j)
      for (int64_t i = 0; i < sp.inner; ++i) {
        const int64_t at = base + j * sp.inner + i;
        od[at] = std::exp(xd[at] - mx[static_cast<std::size_t>(i)]);
        den[static_cast<std::size_t>(i)] += od[at];
      }
    for (int64_t j = 0; j < sp.len; ++j)
      for (int64_t i = 0; i < sp.inner; ++i) od[base + j * sp.inner + i] /= den[static_cast<std::size_t>(i)];
  }
  if (auto* tape = recording_tape({&input})) {
    Tensor y = out;
    detail::record(tape, "softmax", out, [input, y, sp](std::span<const double> g) {
      const auto yd = y.data();
      std::vector<double> gx(yd.size());
      std::vector<double> dot(static_cast<std::size_t>(sp.inner));
      for (int64_t o = 0; o < sp.outer; ++o) {
        const int64_t base = o * sp.len * sp.inner;
        std::fill(dot.begin(), dot.end(), 0.0);
        for (int64_t j = 0; j < sp.len; ++j)
          for (int64_t i = 0; i < sp.inner; ++i) {
            const int64_t at = base + j * sp.inner + i;
            dot[static_cast<std::size_t>(i)] += g[at] * yd[at];
          }
        for (int64_t j = 0; j < sp.len; ++j)
          for (int64_t i = 0; i < sp.inner; ++i) {
            const int64_t at = base + j * sp.inner + i;
            gx[static_cast<std::size_t>(at)] = yd[at] * (g[at] - dot[static_cast<std::size_t>(i)]);
          }
      }
      accumulate_grad(input, gx);
    });
  }
  return out;
}

// --- pooling / resizing ------------------------------------------------------------------

Tensor adaptive_avg_pool(const Tensor& input) {
  if (input.rank() != 4) throw ShapeError("adaptive_avg_pool expects [N,C,H,W], got " + shape_str(input.shape()));
  const int64_t planes = input.size(0) * input.size(1);
  const int64_t area = input.size(2) * input.size(3);
  Tensor out(Shape{input.size(0), input.size(1), 1, 1});
  const auto xd = input.data();
  auto od = out.data_mut();
  for (int64_t p = 0; p < planes; ++p) {
    double acc = 0.0;
    for (int64_t i = 0; i < area; ++i) acc += xd[p * area + i];
    od[p] = acc / static_cast<double>(area);
  }
  if (auto* tape = recording_tape({&input})) {
    detail::record(tape, "adaptive_avg_pool", out, [input, planes, area](std::span<const double> g) {
      std::vector<double> gx(input.data().size());
      const double inv = 1.0 / static_cast<double>(area);
      for (int64_t p = 0; p < planes; ++p) std::fill_n(gx.begin() + p * area, area, g[p] * inv);
      accumulate_grad(input, gx);
    });
  }
  return out;
}

namespace {
struct Taps {
  std::vector<int64_t> i0, i1;
  std::vector<double> w1;  // weight on i1; i0 gets 1 - w1
};

Taps bilinear_taps(int64_t in, int64_t out) {
  Taps t;
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0.0) src = 0.0;
    int64_t lo = static_cast<int64_t>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const int64_t hi = std::min(lo + 1, in - 1);
    t.i0.push_back(lo);
    t.i1.push_back(hi);
    t.w1.push_back(src - static_cast<double>(lo));
  }
  return t;
}
}  // namespace

Tensor resize_bilinear(const Tensor& input, double scale) {
  if (input.rank() != 4) throw ShapeError("resize_bilinear expects [N,C,H,W], got " + shape_str(input.shape()));
  if (!(scale > 0.0)) throw ValueError("resize_bilinear: scale must be positive");
  const int64_t H = input.size(2), W = input.size(3);
  const auto OH = static_cast<int64_t>(std::llround(static_cast<double>(H) * scale));
  const auto OW = static_cast<int64_t>(std::llround(static_cast<double>(W) * scale));
  if (OH < 1 || OW < 1) throw ShapeError("resize_bilinear: output would be empty");
  if (OH == H && OW == W) return reshape(input, input.shape());
  const int64_t planes = input.size(0) * input.size(1);
  const Taps ty = bilinear_taps(H, OH), tx = bilinear_taps(W, OW);
  Shape os{input.size(0), input.size(1), OH, OW};
  Tensor out(os);
  const auto xd = input.data();
  auto od = out.data_mut();
  for (int64_t p = 0; p < planes; ++p) {
    const double* ip = xd.data() + p * H * W;
    double* op = od.data() + p * OH * OW;
    for (int64_t y = 0; y < OH; ++y) {
      const double wy = ty.w1[static_cast<std::size_t>(y)];
      const double* r0 = ip + ty.i0[static_cast<std::size_t>(y)] * W;
      const double* r1 = ip + ty.i1[static_cast<std::size_t>(y)] * W;
      for (int64_t x = 0; x < OW; ++x) {
        const auto a = static_cast<std::size_t>(x);
        const double wx = tx.w1[a];
        const double top = (1.0 - wx) * r0[tx.i0[a]] + wx * r0[tx.i1[a]];
        const double bot = (1.0 - wx) * r1[tx.i0[a]] + wx * r1[tx.i1[a]];
        op[y * OW + x] = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  if (auto* tape = recording_tape({&input})) {
    detail::record(tape, "resize_bilinear", out, [input, ty, tx, planes, H, W, OH, OW](std::span<const double> g) {
      std::vector<double> gx(input.data().size(), 0.0);
      for (int64_t p = 0; p < planes; ++p) {
        double* gp = gx.data() + p * H * W;
        const double* gop = g.data() + p * OH * OW;
        for (int64_t y = 0; y < OH; ++y) {
          const double wy = ty.w1[static_cast<std::size_t>(y)];
          double* r0 = gp + ty.i0[static_cast<std::size_t>(y)] * W;
          double* r1 = gp + ty.i1[static_cast<std::size_t>(y)] * W;
          for (int64_t x = 0; x < OW; ++x) {
            const auto a = static_cast<std::size_t>(x);
            const double wx = tx.w1[a];
            const double v = gop[y * OW + x];
            r0[tx.i0[a]] += (1.0 - wy) * (1.0 - wx) * v;
            r0[tx.i1[a]] += (1.0 - wy) * wx * v;
            r1[tx.i0[a]] += wy * (1.0 - wx) * v;
            r1[tx.i1[a]] += wy * wx * v;
          }
        }
      }
      accumulate_grad(input, gx);
    });
  }
  return out;
}

Tensor area_downsample(const Tensor& input, int factor) {
  if (input.rank() != 4) throw ShapeError("area_downsample expects [N,C,H,W], got " + shape_str(input.shape()));
  if (factor < 1) throw ValueError("area_downsample: factor must be >= 1");
  if (factor == 1) return reshape(input, input.shape());
  const int64_t H = input.size(2), W = input.size(3);
  if (H % factor != 0 || W % factor != 0) {
    throw ShapeError("area_downsample: " + shape_str(input.shape()) + " not divisible by " + std::to_string(factor));
  }
  const int64_t OH = H / factor, OW = W / factor, planes = input.size(0) * input.size(1);
  Tensor out(Shape{input.size(0), input.size(1), OH, OW});
  const auto xd = input.data();
  auto od = out.data_mut();
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (int64_t p = 0; p < planes; ++p)
    for (int64_t y = 0; y < OH; ++y)
      for (int64_t x = 0; x < OW; ++x) {
        double acc = 0.0;
        for (int64_t dy = 0; dy < factor; ++dy)
          for (int64_t dx = 0; dx < factor; ++dx) acc += xd[(p * H + y * factor + dy) * W + x * factor + dx];
        od[(p * OH + y) * OW + x] = acc * inv;
      }
  if (auto* tape = recording_tape({&input})) {
    detail::record(tape, "area_downsample", out, [input, factor, planes, H, W, OH, OW, inv](std::span<const double> g) {
      std::vector<double> gx(input.data().size());
      for (int64_t p = 0; p < planes; ++p)
        for (int64_t y = 0; y < OH; ++y)
          for (int64_t x = 0; x < OW; ++x) {
            const double v = g[(p * OH + y) * OW + x] * inv;
            for (int64_t dy = 0; dy < factor; ++dy)
              for (int64_t dx = 0; dx < factor; ++dx) gx[static_cast<std::size_t>((p * H + y * factor + dy) * W + x * factor + dx)] = v;
          }
      accumulate_grad(input, gx);
    });
  }
  return out;
}

// --- fft ----------------------------------------------------------------------------------

namespace {

// One differentiable op producing the stacked spectrum [2, ...shape].
Tensor fft2_stacked(const Tensor& re, const Tensor& im, bool inverse) {
  if (re.rank() < 2) throw ShapeError("fft2 needs at least 2 dims, got " + shape_str(re.shape()));
  if (im.defined() && im.shape() != re.shape()) {
    throw ShapeError("fft2: real " + shape_str(re.shape()) + " vs imag " + shape_str(im.shape()));
  }
  const int64_t H = re.size(-2), W = re.size(-1);
  if (!kernels::is_power_of_two(H) || !kernels::is_power_of_two(W)) {
    int64_t ph = 1, pw = 1;
    while (ph < H) ph <<= 1;
    while (pw < W) pw <<= 1;
    throw ShapeError("fft2: trailing dims " + std::to_string(H) + "x" + std::to_string(W) +
                     " must be powers of two; pad to " + std::to_string(ph) + "x" + std::to_string(pw));
  }
  const int64_t planes = re.numel() / (H * W);
  const double scale = inverse ? 1.0 / static_cast<double>(H * W) : 1.0;
  Shape os = re.shape();
  os.insert(os.begin(), 2);
  Tensor out(os);
  auto od = out.data_mut();
  const int64_t n = re.numel();
  std::vector<std::complex<double>> plane(static_cast<std::size_t>(H * W));
  for (int64_t p = 0; p < planes; ++p) {
    for (int64_t i = 0; i < H * W; ++i) {
      plane[static_cast<std::size_t>(i)] = {re.data()[p * H * W + i], im.defined() ? im.data()[p * H * W + i] : 0.0};
    }
    kernels::fft2_inplace(plane.data(), H, W, inverse);
    for (int64_t i = 0; i < H * W; ++i) {
      od[p * H * W + i] = plane[static_cast<std::size_t>(i)].real() * scale;
      od[n + p * H * W + i] = plane[static_cast<std::size_t>(i)].imag() * scale;
    }
  }
  if (auto* tape = recording_tape({&re, &im})) {
    detail::record(tape, inverse ? "ifft2" : "fft2", out, [re, im, inverse, H, W, planes, n](std::span<const double> g) {
      // Adjoint of the (scaled) DFT is the opposite-direction transform with the other scale.
      const double scale = inverse ? 1.0 / static_cast<double>(H * W) : 1.0;
      std::vector<double> gr(static_cast<std::size_t>(n)), gi(static_cast<std::size_t>(n));
      std::vector<std::complex<double>> plane(static_cast<std::size_t>(H * W));
      for (int64_t p = 0; p < planes; ++p) {
        for (int64_t i = 0; i < H * W; ++i) plane[static_cast<std::size_t>(i)] = {g[p * H * W + i], g[n + p * H * W + i]};
        kernels::fft2_inplace(plane.data(), H, W, !inverse);
        for (int64_t i = 0; i < H * W; ++i) {
          gr[static_cast<std::size_t>(p * H * W + i)] = plane[static_cast<std::size_t>(i)].real() * scale;
          gi[static_cast<std::size_t>(p * H * W + i)] = plane[static_cast<std::size_t>(i)].imag() * scale;
        }
      }
      accumulate_grad(re, gr);
      if (im.defined()) accumulate_grad(im, gi);
    });
  }
  return out;
}

ComplexPair unstack(const Tensor& stacked, const Shape& shape) {
  return {reshape(narrow(stacked, 0, 0, 1), shape), reshape(narrow(stacked, 0, 1, 1), shape)};
}

}  // namespace

ComplexPair fft2(const Tensor& input) { return unstack(fft2_stacked(input, Tensor(), false), input.shape()); }

ComplexPair fft2(const ComplexPair& input) {
  return unstack(fft2_stacked(input.real, input.imag, false), input.real.shape());
}

ComplexPair ifft2(const ComplexPair& input) {
  return unstack(fft2_stacked(input.real, input.imag, true), input.real.shape());
}

// --- selection / misc -----------------------------------------------------------------

IndexList topk_indices(std::span<const double> values, std::int64_t k) {
  const auto c = static_cast<int64_t>(values.size());
  if (k < 1 || k > c) {
    throw ValueError("topk_indices: k=" + std::to_string(k) + " outside [1," + std::to_string(c) + "]");
  }
  IndexList order(static_cast<std::size_t>(c));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return values[static_cast<std::size_t>(a)] > values[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

IndexList topk_indices(const Tensor& values, std::int64_t k) { return topk_indices(values.data(), k); }

Tensor clamp(const Tensor& x, double lo, double hi) {
  Tensor out = x.clone();
  for (auto& v : out.data_mut()) v = std::clamp(v, lo, hi);
  return out;
}

bool all_finite(const Tensor& x) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace endoir
