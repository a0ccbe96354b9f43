#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "endoir/diffusion/diffusion.hpp"
#include "endoir/tensor/ops.hpp"
#include "test_support.hpp"

using namespace endoir;
using namespace endoir::diffusion;
using endoir::testing::bitwise_equal;
using endoir::testing::max_abs_diff;
using endoir::testing::randn;

TEST_CASE("schedule construction") {
  auto s = make_schedule(4, 0.1, 0.1, {1});
  const double expect[4] = {0.9, 0.81, 0.729, 0.6561};
  for (int t = 1; t <= 4; ++t) {
    CHECK(s.beta_at(t) == 0.1);
    CHECK(s.alpha_bar_at(t) == doctest::Approx(expect[t - 1]).epsilon(1e-14));
  }
  CHECK(s.alpha_bar_at(0) == 1.0);

  auto big = make_schedule(1000, 1e-4, 2e-2, {1});
  double prod = 1.0, prev = 1.0;
  for (int t = 1; t <= 1000; ++t) {
    const double b = 1e-4 + (2e-2 - 1e-4) * (t - 1) / 999.0;
    prod *= 1.0 - b;
    CHECK(big.beta_at(t) == doctest::Approx(b).epsilon(1e-12));
    CHECK(big.alpha_bar_at(t) == doctest::Approx(prod).epsilon(1e-10));
    CHECK(big.alpha_bar_at(t) < prev);
    CHECK(big.alpha_bar_at(t) > 0.0);
    prev = big.alpha_bar_at(t);
  }
  CHECK(big.alpha_bar_at(1000) < 0.01);

  auto pyr = make_schedule(8, 1e-3, 0.05, {1, 2});
  for (int t = 1; t <= 8; ++t) CHECK(pyr.scale_at(t) == (t <= 4 ? 1 : 2));
  auto three = make_schedule(9, 1e-3, 0.05, {1, 2, 4});
  CHECK(three.scale_at(3) == 1);
  CHECK(three.scale_at(4) == 2);
  CHECK(three.scale_at(9) == 4);

  CHECK_THROWS_AS(make_schedule(1, 0.1, 0.1, {1}), ValueError);
  CHECK_THROWS_AS(make_schedule(4, 0.2, 0.1, {1}), ValueError);
  CHECK_THROWS_AS(make_schedule(4, 0.0, 0.1, {1}), ValueError);
  CHECK_THROWS_AS(make_schedule(4, 0.1, 1.0, {1}), ValueError);
  CHECK_THROWS_AS(make_schedule(4, 0.1, 0.2, {1, 4}), ValueError);
  CHECK_THROWS_AS(NoiseSchedule::from_betas({0.1, 0.2}, {2, 1}), ValueError);
}

TEST_CASE("q_sample edge cases") {
  Tensor y = randn({1, 3, 4, 4}, 1);
  auto s = NoiseSchedule::from_betas({1e-300, 0.2}, {1, 2});
  // beta_t -> 0 at ratio 1: the step is a pure scaling by sqrt(1 - beta_t) = 1.
  Tensor z = q_sample_step(y, 1, s, randn({1, 3, 4, 4}, 2));
  CHECK(max_abs_diff(z.data(), y.data()) < 1e-12);
  // No noise: pure downsampled scaling.
  Tensor d = q_sample(y, 2, s, Tensor({1, 3, 2, 2}, 0.0));
  Tensor ref = mul_scalar(area_downsample(y, 2), std::sqrt(s.alpha_bar_at(2)));
  CHECK(max_abs_diff(d.data(), ref.data()) < 1e-14);
  // abar = 1 edge (t = 0 end of the chain).
  CHECK(max_abs_diff(q_sample(y, 0, s, Tensor(y.shape(), 0.0)).data(), y.data()) == 0.0);
  CHECK_THROWS_AS(q_sample(y, 2, s, Tensor(y.shape(), 0.0)), ShapeError);
  CHECK_THROWS_AS(q_sample_step(y, 2, s, Tensor(y.shape(), 0.0)), ShapeError);
}

TEST_CASE("q_sample Monte-Carlo variance at t=T") {
  auto s = make_schedule(50, 1e-4, 0.05, {1});
  Tensor y0 = randn({1, 1, 2, 2}, 3);
  const int draws = 10000;
  std::vector<double> sum(4, 0.0), sq(4, 0.0);
  for (int i = 0; i < draws; ++i) {
    Tensor yt = q_sample(y0, 50, s, gaussian({1, 1, 2, 2}, 1000 + i));
    for (int k = 0; k < 4; ++k) {
      sum[k] += yt.data()[k];
      sq[k] += yt.data()[k] * yt.data()[k];
    }
  }
  double pooled = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double m = sum[k] / draws;
    pooled += (sq[k] / draws - m * m) / 4.0;
  }
  const double target = 1.0 - s.alpha_bar_at(50);
  CHECK(std::abs(pooled - target) / target < 0.05);
}

TEST_CASE("iterated single steps agree with the closed form on a flat schedule") {
  auto s = make_schedule(10, 1e-2, 0.2, {1});
  Tensor y0 = randn({1, 1, 2, 2}, 4);
  // Mean: iterate with zero noise.
  Tensor y = y0;
  for (int t = 1; t <= 10; ++t) y = q_sample_step(y, t, s, Tensor(y0.shape(), 0.0));
  Tensor closed = q_sample(y0, 10, s, Tensor(y0.shape(), 0.0));
  CHECK(max_abs_diff(y.data(), closed.data()) < 1e-12);

  const int draws = 6000;
  double sq_iter = 0.0, sq_closed = 0.0;
  for (int i = 0; i < draws; ++i) {
    Tensor yi = y0;
    for (int t = 1; t <= 10; ++t) yi = q_sample_step(yi, t, s, gaussian(y0.shape(), 50000 + i * 16 + t));
    Tensor yc = q_sample(y0, 10, s, gaussian(y0.shape(), 900000 + i));
    for (int k = 0; k < 4; ++k) {
      sq_iter += std::pow(yi.data()[k] - closed.data()[k], 2) / (4.0 * draws);
      sq_closed += std::pow(yc.data()[k] - closed.data()[k], 2) / (4.0 * draws);
    }
  }
  const double target = 1.0 - s.alpha_bar_at(10);
  CHECK(std::abs(sq_iter - target) / target < 0.05);
  CHECK(std::abs(sq_closed - target) / target < 0.05);
}

TEST_CASE("p_step printed-mean arithmetic on 2x2") {
  auto s = NoiseSchedule::from_betas({0.1, 0.2, 0.3}, {1, 1, 1});
  Tensor y({1, 1, 2, 2}, std::vector<double>{0.5, -1.0, 2.0, 0.25});
  Denoiser stub = [](const Tensor& v, int) { return add_scalar(mul_scalar(v, 0.5), 0.1); };

  // t = 3: abar_2 = 0.72, abar_3 = 0.504.
  Tensor m3 = p_step(y, 3, stub, s);
  const double c1 = std::sqrt(0.9 * 0.8), c2 = (1.0 - 0.72) / (1.0 - 0.72 * 0.7);
  const double yv[4] = {0.5, -1.0, 2.0, 0.25};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(m3.data()[i] - (c1 * (0.5 * yv[i] + 0.1) + c2 * yv[i])) <= 1e-12);

  // t = 1 with f = identity: abar_0 = 1 -> mean = f(y) exactly, variance exactly 0.
  Denoiser ident = [](const Tensor& v, int) { return v; };
  Tensor m1 = p_step(y, 1, ident, s);
  for (int i = 0; i < 4; ++i) CHECK(std::abs(m1.data()[i] - yv[i]) <= 1e-12);
  CHECK(posterior_variance(1, s) == 0.0);
  Tensor noisy = p_step(y, 1, ident, s, {}, Tensor({1, 1, 2, 2}, 5.0));
  CHECK(bitwise_equal(noisy, m1));

  CHECK(posterior_variance(3, s) == doctest::Approx(0.3 * (1 - 0.72) / (1 - 0.504)).epsilon(1e-14));
  CHECK_THROWS_AS(p_step(y, 0, ident, s), ValueError);
}

TEST_CASE("p_step upsamples across a pyramid boundary") {
  auto s = NoiseSchedule::from_betas({0.1, 0.2}, {1, 2});
  Tensor y = randn({1, 3, 2, 2}, 5);
  int calls = 0;
  Denoiser f = [&](const Tensor& v, int t) {
    ++calls;
    CHECK(t == 2);
    CHECK(v.shape() == Shape{1, 3, 4, 4});
    return mul_scalar(v, 0.3);
  };
  Tensor out = p_step(y, 2, f, s);
  Tensor up = resize_bilinear(y, 2.0);
  const double c1 = std::sqrt(0.9), c2 = (1 - 0.9) / (1 - 0.72);
  Tensor ref(up.shape());
  for (std::int64_t i = 0; i < up.numel(); ++i) ref.data_mut()[i] = c1 * 0.3 * up.data()[i] + c2 * up.data()[i];
  CHECK(max_abs_diff(out.data(), ref.data()) < 1e-12);
  CHECK(calls == 1);
}

TEST_CASE("posterior and ddim rules") {
  auto s = make_schedule(6, 0.05, 0.3, {1});
  Tensor y0 = randn({1, 2, 4, 4}, 6), eps = randn({1, 2, 4, 4}, 7);
  Denoiser perfect = [&](const Tensor&, int) { return y0; };
  // With the true x0, DDIM moves along the same noise direction.
  StepOptions ddim{.rule = ReverseRule::Ddim};
  for (int t = 6; t >= 1; --t) {
    Tensor yt = q_sample(y0, t, s, eps);
    Tensor prev = p_step(yt, t, perfect, s, ddim, randn(y0.shape(), 8));
    Tensor ref = q_sample(y0, t - 1, s, eps);
    CHECK(max_abs_diff(prev.data(), ref.data()) < 1e-12);
  }
  StepOptions post{.rule = ReverseRule::Posterior};
  Tensor yt = q_sample(y0, 4, s, eps);
  Tensor m = p_step(yt, 4, perfect, s, post);
  const double ab_t = s.alpha_bar_at(4), ab_p = s.alpha_bar_at(3), b = s.beta_at(4);
  for (std::int64_t i = 0; i < m.numel(); ++i) {
    const double ref = std::sqrt(ab_p) * b / (1 - ab_t) * y0.data()[i] +
                       std::sqrt(1 - b) * (1 - ab_p) / (1 - ab_t) * yt.data()[i];
    CHECK(std::abs(m.data()[i] - ref) < 1e-12);
  }
}

TEST_CASE("sample: constant stub follows the iterated recurrence") {
  auto s = make_schedule(5, 0.05, 0.25, {1});
  Tensor x = randn({1, 3, 4, 4}, 9);
  const double c = 0.37;
  Denoiser f = [&](const Tensor& v, int) { return Tensor(v.shape(), c); };
  SampleOptions opt;
  opt.init = Tensor({1, 3, 4, 4}, 0.8);
  opt.out_lo = -10;
  opt.out_hi = 10;
  auto r = sample(x, f, s, 1, opt);
  double y = 0.8;
  for (int t = 5; t >= 1; --t) {
    const double ab_t = s.alpha_bar_at(t), ab_p = s.alpha_bar_at(t - 1);
    y = std::sqrt(ab_p) * c + (1 - ab_p) / (1 - ab_t) * y;
  }
  for (double v : r.image.data()) CHECK(std::abs(v - y) < 1e-12);
  CHECK(std::abs(y - c) < 1e-15);  // final step has abar_0 = 1
}

TEST_CASE("sample: T=1, determinism, resolution trace") {
  auto one = NoiseSchedule::from_betas({0.3}, {1});
  int calls = 0;
  Denoiser f = [&](const Tensor& v, int) {
    ++calls;
    return mul_scalar(v, 0.5);
  };
  Tensor x = randn({1, 3, 8, 8}, 10);
  sample(x, f, one, 3);
  CHECK(calls == 1);

  auto pyr = make_schedule(6, 1e-3, 0.1, {1, 2});
  SampleOptions opt{.stochastic = true};
  auto a = sample(x, f, pyr, 11, opt);
  auto b = sample(x, f, pyr, 11, opt);
  CHECK(bitwise_equal(a.image, b.image));
  auto c = sample(x, f, pyr, 12, opt);
  CHECK_FALSE(bitwise_equal(a.image, c.image));
  for (double v : a.image.data()) CHECK((v >= 0.0 && v <= 1.0));

  REQUIRE(a.step_shapes.size() == 7);
  for (int t = 6; t >= 1; --t) {
    const auto& sh = a.step_shapes[static_cast<std::size_t>(6 - t)];
    CHECK(sh[2] == 8 / pyr.scale_at(t));
    CHECK(sh[3] == 8 / pyr.scale_at(t));
  }
  CHECK(a.step_shapes.back() == x.shape());
}

TEST_CASE("training pair resolutions") {
  // scales [1,1,2,2]
  auto s = make_schedule(4, 0.01, 0.2, {1, 2});
  Tensor y0 = randn({2, 3, 8, 8}, 13);
  auto coarse = training_pair(y0, 4, s, gaussian({2, 3, 4, 4}, 14));
  CHECK(coarse.input.shape() == Shape{2, 3, 4, 4});
  CHECK(coarse.target.shape() == Shape{2, 3, 4, 4});
  CHECK(max_abs_diff(coarse.target.data(), area_downsample(y0, 2).data()) == 0.0);
  // Step 3 noise lives at r_3 = 2, the denoiser sees it upsampled to r_2 = 1.
  auto boundary = training_pair(y0, 3, s, gaussian({2, 3, 4, 4}, 15));
  CHECK(boundary.input.shape() == y0.shape());
  CHECK(boundary.target.shape() == y0.shape());
  auto fine = training_pair(y0, 1, s, gaussian({2, 3, 8, 8}, 16));
  CHECK(fine.input.shape() == y0.shape());
  CHECK(bitwise_equal(fine.target, y0));
}
