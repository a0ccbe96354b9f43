#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "endoir/tensor/gradcheck.hpp"
#include "endoir/tensor/kernels.hpp"
#include "endoir/tensor/ops.hpp"
#include "endoir/tensor/profile.hpp"

using namespace endoir;

namespace {

Tensor randn(Shape s, unsigned seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = d(rng);
  return Tensor(std::move(s), std::move(v));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void require_grad_ok(const GradCheckResult& r, double tol) {
  INFO(r.name << " rel=" << r.rel_error);
  CHECK(r.rel_error <= tol);
}

// Direct quadruple loop, used as the conv oracle.
std::vector<double> naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const auto N = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  const auto O = w.size(0), kh = w.size(2), kw = w.size(3);
  const auto OH = (H + 2 * pad - kh) / stride + 1, OW = (W + 2 * pad - kw) / stride + 1;
  std::vector<double> out;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t o = 0; o < O; ++o)
      for (int64_t oy = 0; oy < OH; ++oy)
        for (int64_t ox = 0; ox < OW; ++ox) {
          double acc = b.defined() ? b.data()[o] : 0.0;
          for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < kh; ++i)
              for (int64_t j = 0; j < kw; ++j) {
                const int64_t y = oy * stride - pad + i, xx = ox * stride - pad + j;
                if (y < 0 || y >= H || xx < 0 || xx >= W) continue;
                acc += x.at({n, c, y, xx}) * w.at({o, c, i, j});
              }
          out.push_back(acc);
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d identity and constant propagation") {
  Tensor x = randn({1, 1, 3, 3}, 1);
  Tensor y = conv2d(x, Tensor({1, 1, 1, 1}, 1.0), Tensor({1}, 0.0), 1, 0);
  CHECK(max_abs_diff(y.data(), x.data()) == 0.0);

  Tensor c({1, 1, 4, 4}, 7.0);
  Tensor z = conv2d(c, Tensor({1, 1, 3, 3}, 1.0), Tensor(), 1, 0);
  CHECK(z.shape() == Shape{1, 1, 2, 2});
  for (double v : z.data()) CHECK(v == 63.0);
}

TEST_CASE("conv2d matches the direct loop on both kernel paths") {
  Tensor x = randn({2, 3, 7, 6}, 2), w = randn({4, 3, 3, 3}, 3), b = randn({4}, 4);
  for (int stride : {1, 2})
    for (int pad : {0, 1}) {
      const auto ref = naive_conv(x, w, b, stride, pad);
      for (auto exec : {kernels::Exec::Serial, kernels::Exec::Parallel}) {
        kernels::set_default_exec(exec);
        Tensor y = conv2d(x, w, b, stride, pad);
        CHECK(max_abs_diff(y.data(), ref) < 1e-12);
      }
    }
  kernels::set_default_exec(kernels::Exec::Parallel);
}

TEST_CASE("conv2d serial and parallel backward agree") {
  Tensor x = randn({2, 3, 6, 6}, 5), w = randn({4, 3, 3, 3}, 6), b = randn({4}, 7);
  std::vector<std::vector<double>> grads[2];
  int slot = 0;
  for (auto exec : {kernels::Exec::Serial, kernels::Exec::Parallel}) {
    kernels::set_default_exec(exec);
    for (auto* t : {&x, &w, &b}) {
      t->set_requires_grad(true);
      t->clear_grad();
    }
    GradTape tape;
    tape.backward(random_projection(conv2d(x, w, b, 2, 1), 11));
    for (auto* t : {&x, &w, &b}) grads[slot].emplace_back(t->grad().begin(), t->grad().end());
    ++slot;
  }
  kernels::set_default_exec(kernels::Exec::Parallel);
  for (std::size_t i = 0; i < 3; ++i) CHECK(max_abs_diff(grads[0][i], grads[1][i]) < 1e-12);
}

TEST_CASE("conv2d errors") {
  Tensor x({1, 3, 4, 4});
  CHECK_THROWS_AS(conv2d(x, Tensor({2, 2, 3, 3}), Tensor(), 1, 0), ShapeError);
  CHECK_THROWS_AS(conv2d(x, Tensor({2, 3, 3, 3}), Tensor(), 0, 0), ValueError);
  CHECK_THROWS_AS(conv2d(x, Tensor({2, 3, 7, 7}), Tensor(), 1, 0), ShapeError);
  try {
    conv2d(x, Tensor({2, 2, 3, 3}), Tensor(), 1, 0);
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1,3,4,4]") != std::string::npos);
    CHECK(msg.find("[2,2,3,3]") != std::string::npos);
  }
}

TEST_CASE("conv2d gradient vs finite differences") {
  Tensor x = randn({2, 3, 5, 5}, 8), w = randn({4, 3, 3, 3}, 9), b = randn({4}, 10);
  auto r = grad_check("conv2d", [&] { return random_projection(conv2d(x, w, b, 1, 1), 3); }, {x, w, b},
                      {.eps = 1e-3, .tolerance = 1e-3});
  require_grad_ok(r, 1e-5);  // conv is linear in each argument
  auto rs = grad_check("conv2d_stride2", [&] { return random_projection(conv2d(x, w, b, 2, 1), 4); }, {x, w, b});
  require_grad_ok(rs, 1e-5);
  Tensor dk = randn({3, 1, 3, 3}, 12), db = randn({3}, 13);
  auto rd = grad_check("depthwise_conv2d", [&] { return random_projection(depthwise_conv2d(x, dk, db, 1), 5); },
                       {x, dk, db});
  require_grad_ok(rd, 1e-5);
}

TEST_CASE("depthwise conv equals per-channel dense conv") {
  Tensor x = randn({2, 3, 5, 5}, 14), k = randn({3, 1, 3, 3}, 15);
  Tensor y = depthwise_conv2d(x, k, Tensor(), 1);
  for (int64_t c = 0; c < 3; ++c) {
    Tensor xc = narrow(x, 1, c, 1);
    Tensor kc = narrow(k, 0, c, 1);
    Tensor ref = conv2d(xc, kc, Tensor(), 1, 1);
    CHECK(max_abs_diff(narrow(y, 1, c, 1).data(), ref.data()) < 1e-12);
  }
}

TEST_CASE("layer_norm") {
  Tensor one({1}, 1.0), zero({1}, 0.0);
  Tensor c({2, 4}, 3.0);
  Tensor gc({4}, 1.0), sc({4}, 0.0);
  Tensor lc = layer_norm(c, {1}, gc, sc, 1e-5);
  for (double v : lc.data()) CHECK(v == 0.0);

  Tensor two({1, 2}, std::vector<double>{1.0, 3.0});
  Tensor y = layer_norm(two, {1}, Tensor({2}, 1.0), Tensor({2}, 0.0), 1e-12);
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-9));

  CHECK_THROWS_AS(layer_norm(two, {1}, Tensor({2}, 1.0), Tensor({2}, 0.0), 0.0), ValueError);

  // Channel-wise normalization of an NCHW map.
  Tensor x = randn({2, 8, 4, 4}, 16), g = randn({8}, 17), s = randn({8}, 18);
  auto r = grad_check("layer_norm", [&] { return random_projection(layer_norm(x, {1}, g, s, 1e-5), 6); }, {x, g, s});
  require_grad_ok(r, 1e-3);
  Tensor g3 = randn({8, 4, 4}, 19), s3 = randn({8, 4, 4}, 20);
  auto r3 = grad_check("layer_norm_chw",
                       [&] { return random_projection(layer_norm(x, {1, 2, 3}, g3, s3, 1e-5), 7); }, {x, g3, s3});
  require_grad_ok(r3, 1e-3);
}

TEST_CASE("softmax") {
  Tensor z = softmax(Tensor({2}, 0.0), 0);
  CHECK(z.data()[0] == 0.5);
  CHECK(z.data()[1] == 0.5);
  Tensor big = softmax(Tensor({2}, std::vector<double>{1000.0, 0.0}), 0);
  CHECK(all_finite(big));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(big.data()[1] < 1e-300);

  Tensor x = randn({3, 5}, 21, 4.0);
  Tensor y = softmax(x, 1);
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int c = 0; c < 5; ++c) {
      CHECK(y.at({r, c}) > 0.0);
      s += y.at({r, c});
    }
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
  Tensor y0 = softmax(x, 0);
  for (int c = 0; c < 5; ++c) {
    double s = 0;
    for (int r = 0; r < 3; ++r) s += y0.at({r, c});
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
  require_grad_ok(grad_check("softmax", [&] { return random_projection(softmax(x, 1), 8); }, {x}), 1e-3);
  require_grad_ok(grad_check("softmax_dim0", [&] { return random_projection(softmax(x, 0), 9); }, {x}), 1e-3);
  CHECK_THROWS_AS(softmax(x, 2), ShapeError);
}

TEST_CASE("gelu") {
  CHECK(gelu_scalar(0.0) == 0.0);
  CHECK(std::abs(gelu_scalar(10.0) - 10.0) < 1e-3);
  Tensor x = randn({17}, 22, 2.0);
  require_grad_ok(grad_check("gelu", [&] { return random_projection(gelu(x), 10); }, {x}), 1e-3);
}

TEST_CASE("fft2") {
  const int n = 8;
  Tensor c({n, n}, 2.5);
  auto F = fft2(c);
  CHECK(F.real.data()[0] == doctest::Approx(2.5 * n * n));
  for (int i = 1; i < n * n; ++i) {
    CHECK(std::abs(F.real.data()[i]) <= 1e-6);
    CHECK(std::abs(F.imag.data()[i]) <= 1e-6);
  }
  Tensor imp({n, n}, 0.0);
  imp.data_mut()[0] = 1.0;
  auto I = fft2(imp);
  for (int i = 0; i < n * n; ++i) {
    CHECK(std::hypot(I.real.data()[i], I.imag.data()[i]) == doctest::Approx(1.0));
  }

  Tensor x = randn({8, 8}, 23);
  auto X = fft2(x);
  double ex = 0, eX = 0;
  for (double v : x.data()) ex += v * v;
  for (int i = 0; i < 64; ++i) eX += X.real.data()[i] * X.real.data()[i] + X.imag.data()[i] * X.imag.data()[i];
  CHECK(std::abs(ex - eX / 64.0) / ex <= 1e-5);

  // Oracle: direct O(N^4) DFT.
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double re = 0, im = 0;
      for (int y = 0; y < 8; ++y)
        for (int xx = 0; xx < 8; ++xx) {
          const double ang = -2.0 * M_PI * (u * y + v * xx) / 8.0;
          re += x.at({y, xx}) * std::cos(ang);
          im += x.at({y, xx}) * std::sin(ang);
        }
      CHECK(std::abs(re - X.real.at({u, v})) < 1e-9);
      CHECK(std::abs(im - X.imag.at({u, v})) < 1e-9);
    }

  Tensor batch = randn({2, 3, 4, 8}, 24);
  auto back = ifft2(fft2(batch));
  CHECK(max_abs_diff(back.real.data(), batch.data()) <= 1e-5);
  for (double v : back.imag.data()) CHECK(std::abs(v) <= 1e-5);

  CHECK_THROWS_AS(fft2(Tensor({6, 8})), ShapeError);
  try {
    fft2(Tensor({6, 8}));
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("pad to 8x8") != std::string::npos);
  }

  Tensor xs = randn({1, 2, 4, 4}, 25);
  auto mag = [&] {
    auto f = fft2(xs);
    return random_projection(log1p(sqrt(add_scalar(add(mul(f.real, f.real), mul(f.imag, f.imag)), 1e-12))), 11);
  };
  require_grad_ok(grad_check("fft_magnitude", mag, {xs}, {.eps = 1e-5}), 1e-3);
  Tensor im_in = randn({1, 2, 4, 4}, 26);
  require_grad_ok(grad_check("ifft2",
                             [&] {
                               auto r = ifft2({xs, im_in});
                               return add(random_projection(r.real, 12), random_projection(r.imag, 13));
                             },
                             {xs, im_in}),
                  1e-5);
}

TEST_CASE("adaptive_avg_pool") {
  Tensor c({1, 1, 3, 3}, 5.0);
  CHECK(adaptive_avg_pool(c).item() == 5.0);
  Tensor q({1, 1, 2, 2}, std::vector<double>{1, 3, 5, 7});
  CHECK(adaptive_avg_pool(q).item() == 4.0);
  Tensor x = randn({2, 3, 4, 5}, 27);
  Tensor p = adaptive_avg_pool(x);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t ch = 0; ch < 3; ++ch) {
      double s = 0;
      for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 5; ++j) s += x.at({n, ch, i, j});
      CHECK(p.at({n, ch, 0, 0}) == s / 20.0);
    }
  require_grad_ok(grad_check("adaptive_avg_pool", [&] { return random_projection(adaptive_avg_pool(x), 14); }, {x}),
                  1e-5);
}

TEST_CASE("topk_indices") {
  std::vector<double> a{0.4, 0.3, 0.2, 0.1};
  CHECK(topk_indices(a, 2) == IndexList{0, 1});
  std::vector<double> eq(4, 0.25);
  CHECK(topk_indices(eq, 2) == IndexList{0, 1});
  CHECK_THROWS_AS(topk_indices(a, 0), ValueError);
  CHECK_THROWS_AS(topk_indices(a, 5), ValueError);

  std::mt19937_64 rng(28);
  std::uniform_int_distribution<int> small(0, 9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(64);
    for (auto& x : v) x = small(rng);  // plenty of ties
    // Full-sort oracle: sort (value desc, index asc), take 32, sort ascending.
    std::vector<std::pair<double, int64_t>> p;
    for (int64_t i = 0; i < 64; ++i) p.push_back({-v[i], i});
    std::sort(p.begin(), p.end());
    IndexList ref;
    for (int i = 0; i < 32; ++i) ref.push_back(p[i].second);
    std::sort(ref.begin(), ref.end());
    CHECK(topk_indices(v, 32) == ref);
  }
}

TEST_CASE("gather / scatter channels") {
  Tensor x = randn({2, 5, 3, 3}, 29);
  IndexList all{0, 1, 2, 3, 4};
  CHECK(max_abs_diff(gather_channels(x, all).data(), x.data()) == 0.0);

  Tensor payload({2, 1, 3, 3}, 0.0);
  Tensor s = scatter_channels(payload, {1}, x);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 5; ++c)
      for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 3; ++j) {
          if (c == 1)
            CHECK(s.at({n, c, i, j}) == 0.0);
          else
            CHECK(s.at({n, c, i, j}) == x.at({n, c, i, j}));
        }

  std::mt19937_64 rng(30);
  for (int trial = 0; trial < 50; ++trial) {
    IndexList perm(5);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    perm.resize(1 + trial % 5);
    std::sort(perm.begin(), perm.end());
    Tensor rt = scatter_channels(gather_channels(x, perm), perm, x);
    CHECK(std::equal(rt.data().begin(), rt.data().end(), x.data().begin()));
  }
  CHECK_THROWS_AS(gather_channels(x, {1, 1}), ValueError);
  CHECK_THROWS_AS(gather_channels(x, {5}), ValueError);
  CHECK_THROWS_AS(scatter_channels(payload, {0, 0}, x), ValueError);

  Tensor pl = randn({2, 2, 3, 3}, 31);
  require_grad_ok(grad_check("scatter_channels",
                             [&] { return random_projection(scatter_channels(pl, {0, 3}, x), 15); }, {pl, x}),
                  1e-5);
  require_grad_ok(grad_check("gather_channels", [&] { return random_projection(gather_channels(x, {4, 1}), 16); },
                             {x}),
                  1e-5);
}

TEST_CASE("matmul, linear, elementwise") {
  Tensor a = randn({3, 4}, 32), b = randn({4, 5}, 33);
  Tensor c = matmul(a, b);
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 5; ++j) {
      double s = 0;
      for (int64_t k = 0; k < 4; ++k) s += a.at({i, k}) * b.at({k, j});
      CHECK(std::abs(c.at({i, j}) - s) < 1e-12);
    }
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      Tensor A = randn(ta ? Shape{2, 4, 3} : Shape{2, 3, 4}, 34);
      Tensor B = randn(tb ? Shape{2, 5, 4} : Shape{2, 4, 5}, 35);
      auto r = grad_check("matmul", [&] { return random_projection(matmul(A, B, ta, tb), 17); }, {A, B});
      require_grad_ok(r, 1e-5);
    }
  Tensor x = randn({3, 4}, 36), w = randn({6, 4}, 37), bias = randn({6}, 38);
  require_grad_ok(grad_check("linear", [&] { return random_projection(linear(x, w, bias), 18); }, {x, w, bias}),
                  1e-5);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);

  Tensor p = randn({2, 3, 4}, 39), q = randn({3, 1}, 40);
  require_grad_ok(grad_check("add", [&] { return random_projection(add(p, q), 19); }, {p, q}), 1e-5);
  require_grad_ok(grad_check("sub", [&] { return random_projection(sub(p, q), 20); }, {p, q}), 1e-5);
  require_grad_ok(grad_check("mul", [&] { return random_projection(mul(p, q), 21); }, {p, q}), 1e-5);
  require_grad_ok(grad_check("mul_scalar", [&] { return random_projection(mul_scalar(p, -1.7), 22); }, {p}), 1e-5);
  Tensor t = randn({2, 3, 4}, 41);
  require_grad_ok(grad_check("mse_loss", [&] { return mse_loss(p, t); }, {p, t}), 1e-3);
  CHECK_THROWS_AS(add(p, Tensor({2, 2})), ShapeError);
}

TEST_CASE("chunk, concat, narrow, resize") {
  Tensor a = randn({2, 3, 4, 4}, 42), b = randn({2, 3, 4, 4}, 43);
  auto parts = chunk(concat({a, b}, 1), 2, 1);
  CHECK(parts[0].shape() == a.shape());
  CHECK(max_abs_diff(parts[0].data(), a.data()) == 0.0);
  CHECK(max_abs_diff(parts[1].data(), b.data()) == 0.0);
  CHECK_THROWS_AS(chunk(a, 2, 1), ShapeError);

  CHECK(max_abs_diff(resize_bilinear(a, 1.0).data(), a.data()) == 0.0);
  Tensor up = resize_bilinear(a, 2.0);
  CHECK(up.shape() == Shape{2, 3, 8, 8});
  // Upsampling a constant stays constant; area-down of a bilinear 2x up of
  // a constant returns it.
  Tensor cst({1, 1, 4, 4}, 0.3);
  Tensor ucst = resize_bilinear(cst, 2.0);
  for (double v : ucst.data()) CHECK(v == doctest::Approx(0.3));
  Tensor dn = area_downsample(a, 2);
  CHECK(dn.at({0, 0, 0, 0}) ==
        doctest::Approx((a.at({0, 0, 0, 0}) + a.at({0, 0, 0, 1}) + a.at({0, 0, 1, 0}) + a.at({0, 0, 1, 1})) / 4));

  Tensor s = randn({1, 2, 4, 4}, 44), s2 = randn({1, 3, 4, 4}, 45);
  require_grad_ok(grad_check("concat", [&] { return random_projection(concat({s, s2}, 1), 23); }, {s, s2}), 1e-5);
  require_grad_ok(grad_check("chunk",
                             [&] {
                               auto c = chunk(s2, 3, 1);
                               return add(random_projection(c[0], 24), random_projection(c[2], 25));
                             },
                             {s2}),
                  1e-5);
  require_grad_ok(grad_check("resize_bilinear", [&] { return random_projection(resize_bilinear(s, 2.0), 26); }, {s}),
                  1e-5);
  require_grad_ok(grad_check("resize_bilinear_half", [&] { return random_projection(resize_bilinear(s, 0.5), 27); },
                             {s}),
                  1e-5);
  require_grad_ok(grad_check("area_downsample", [&] { return random_projection(area_downsample(s, 2), 28); }, {s}),
                  1e-5);
  require_grad_ok(grad_check("reshape", [&] { return random_projection(reshape(s, {2, 16}), 29); }, {s}), 1e-5);
  Tensor pos = add_scalar(mul(s, s), 0.5);
  require_grad_ok(grad_check("sqrt", [&] { return random_projection(sqrt(pos), 30); }, {pos}), 1e-3);
  require_grad_ok(grad_check("log1p", [&] { return random_projection(log1p(pos), 31); }, {pos}), 1e-3);
}

TEST_CASE("composite conv -> norm -> softmax -> sum") {
  Tensor x = randn({2, 3, 4, 4}, 46), w = randn({4, 3, 3, 3}, 47), b = randn({4}, 48);
  Tensor g = randn({4}, 49), s = randn({4}, 50);
  auto f = [&] {
    Tensor h = conv2d(x, w, b, 1, 1);
    h = layer_norm(h, {1}, g, s, 1e-5);
    return random_projection(softmax(h, 1), 32);
  };
  require_grad_ok(grad_check("composite", f, {x, w, b, g, s}), 1e-3);
}

TEST_CASE("tape contract") {
  Tensor w = randn({3}, 51).set_requires_grad(true);
  Tensor v = randn({3}, 52).set_requires_grad(true);
  GradTape tape;
  Tensor loss = sum(mul(add(w, v), w));
  tape.backward(loss);
  for (int c : tape.replay_counts()) CHECK(c == 1);
  for (int i = 0; i < 3; ++i) {
    CHECK(w.grad()[i] == doctest::Approx(2 * w.data()[i] + v.data()[i]));
    CHECK(v.grad()[i] == doctest::Approx(w.data()[i]));
  }
  CHECK_THROWS(tape.backward(loss));

  Tensor a = randn({2, 3, 4, 4}, 53).set_requires_grad(true);
  Tensor k = randn({2, 3, 3, 3}, 54).set_requires_grad(true);
  GradTape t2;
  t2.backward(sum(softmax(conv2d(a, k, Tensor(), 1, 1), 1)), 0.0);
  for (double gv : a.grad()) CHECK(gv == 0.0);
  for (double gv : k.grad()) CHECK(gv == 0.0);
}

TEST_CASE("gradient fault injection is caught") {
  Tensor x = randn({5}, 55);
  detail::set_gradient_fault("gelu");
  auto r = grad_check("gelu", [&] { return random_projection(gelu(x), 33); }, {x});
  detail::set_gradient_fault("");
  CHECK_FALSE(r.passed);
}

TEST_CASE("profiler counts conv MACs") {
  Profiler prof;
  {
    ProfileScope scope("stem");
    conv2d(Tensor({1, 1, 8, 8}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor(), 1, 1);
  }
  CHECK(flop_count(prof.records()) == 576);
  CHECK(flop_count(prof.records(), "stem") == 576);
  CHECK(flop_count(prof.records(), "head") == 0);
}
