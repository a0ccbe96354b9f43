#include "endoir/diffusion/diffusion.hpp"

#include <cmath>
#include <random>
#include <string>

#include "endoir/tensor/ops.hpp"

namespace endoir::diffusion {

double NoiseSchedule::beta_at(int t) const {
  if (t < 1 || t > steps()) throw ValueError("step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  return beta[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar_at(int t) const {
  if (t == 0) return 1.0;
  beta_at(t);
  return alpha_bar[static_cast<std::size_t>(t - 1)];
}

int NoiseSchedule::scale_at(int t) const {
  if (t == 0) return 1;
  beta_at(t);
  return scales[static_cast<std::size_t>(t - 1)];
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas, std::vector<int> sc) {
  if (betas.empty()) throw ValueError("schedule needs at least one step");
  if (sc.size() != betas.size()) throw ValueError("schedule: one scale per step required");
  NoiseSchedule s;
  double prod = 1.0;
  int prev = 1;
  for (std::size_t i = 0; i < betas.size(); ++i) {
    if (!(betas[i] > 0.0 && betas[i] < 1.0)) {
      throw ValueError("beta_" + std::to_string(i + 1) + " = " + std::to_string(betas[i]) + " outside (0,1)");
    }
    if (sc[i] != prev && sc[i] != 2 * prev) {
      throw ValueError("scale ratio r_" + std::to_string(i + 1) + "/r_" + std::to_string(i) + " must be 1 or 2");
    }
    prev = sc[i];
    prod *= 1.0 - betas[i];
    s.alpha_bar.push_back(prod);
  }
  s.beta = std::move(betas);
  s.scales = std::move(sc);
  return s;
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end, const std::vector<int>& levels) {
  if (T < 2) throw ValueError("T must be >= 2, got " + std::to_string(T));
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ValueError("need 0 < beta_start <= beta_end < 1");
  }
  if (levels.empty()) throw ValueError("pyramid_levels must not be empty");
  if (static_cast<int>(levels.size()) > T) throw ValueError("more pyramid levels than steps");
  std::vector<double> betas;
  std::vector<int> scales;
  for (int t = 1; t <= T; ++t) {
    const double frac = static_cast<double>(t - 1) / static_cast<double>(T - 1);
    betas.push_back(beta_start + (beta_end - beta_start) * frac);
    const auto seg = static_cast<std::size_t>((t - 1) * static_cast<int>(levels.size()) / T);
    scales.push_back(levels[seg]);
  }
  return NoiseSchedule::from_betas(std::move(betas), std::move(scales));
}

std::int64_t resolution_at(std::int64_t base, int r) {
  if (r < 1 || base % r != 0) {
    throw ShapeError("resolution " + std::to_string(base) + " not divisible by pyramid factor " + std::to_string(r));
  }
  return base / r;
}

Tensor downscale(const Tensor& y, int factor) { return area_downsample(y, factor); }

Tensor upscale(const Tensor& y, int factor) {
  if (factor < 1) throw ValueError("upscale factor must be >= 1");
  return resize_bilinear(y, static_cast<double>(factor));
}

namespace {

// Elementwise a*x + b*z, the workhorse of the closed-form updates.
Tensor axpby(double a, const Tensor& x, double b, const Tensor& z) {
  if (x.shape() != z.shape()) throw ShapeError("shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(z.shape()));
  Tensor out(x.shape());
  auto o = out.data_mut();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a * x.data()[i] + b * z.data()[i];
  return out;
}

void check_noise(const Tensor& noise, const Shape& expected, const char* op) {
  if (noise.shape() != expected) {
    throw ShapeError(std::string(op) + ": noise " + shape_str(noise.shape()) + " vs resolution " + shape_str(expected));
  }
}

}  // namespace

Tensor q_sample_step(const Tensor& y_prev, int t, const NoiseSchedule& s, const Tensor& noise) {
  const int ratio = s.scale_at(t) / s.scale_at(t - 1);
  Tensor d = downscale(y_prev, ratio);
  check_noise(noise, d.shape(), "q_sample_step");
  const double b = s.beta_at(t);
  return axpby(std::sqrt(1.0 - b), d, std::sqrt(b), noise);
}

Tensor q_sample(const Tensor& y0, int t, const NoiseSchedule& s, const Tensor& noise) {
  Tensor d = downscale(y0, s.scale_at(t));
  check_noise(noise, d.shape(), "q_sample");
  const double ab = s.alpha_bar_at(t);
  return axpby(std::sqrt(ab), d, std::sqrt(1.0 - ab), noise);
}

double posterior_variance(int t, const NoiseSchedule& s) {
  return s.beta_at(t) * (1.0 - s.alpha_bar_at(t - 1)) / (1.0 - s.alpha_bar_at(t));
}

Tensor p_step(const Tensor& y_t, int t, const Denoiser& f, const NoiseSchedule& s, const StepOptions& opt,
              const Tensor& noise) {
  if (t < 1) throw ValueError("p_step at t=" + std::to_string(t) + ": there is no step before t=0");
  const int ratio = s.scale_at(t) / s.scale_at(t - 1);
  Tensor y_up = upscale(y_t, ratio);
  Tensor x0 = f(y_up, t);
  if (x0.shape() != y_up.shape()) {
    throw ShapeError("denoiser returned " + shape_str(x0.shape()) + " for input " + shape_str(y_up.shape()));
  }
  if (opt.clip_lo < opt.clip_hi) x0 = clamp(x0, opt.clip_lo, opt.clip_hi);

  const double ab_t = s.alpha_bar_at(t), ab_p = s.alpha_bar_at(t - 1), b = s.beta_at(t);
  Tensor mean;
  switch (opt.rule) {
    case ReverseRule::PrintedMean:
      mean = axpby(std::sqrt(ab_p), x0, (1.0 - ab_p) / (1.0 - ab_t), y_up);
      break;
    case ReverseRule::Posterior:
      mean = axpby(std::sqrt(ab_p) * b / (1.0 - ab_t), x0, std::sqrt(1.0 - b) * (1.0 - ab_p) / (1.0 - ab_t), y_up);
      break;
    case ReverseRule::Ddim: {
      // eps_hat = (y - sqrt(abar_t) x0) / sqrt(1 - abar_t)
      const double c_eps = std::sqrt(1.0 - ab_p) / std::sqrt(1.0 - ab_t);
      return axpby(std::sqrt(ab_p) - c_eps * std::sqrt(ab_t), x0, c_eps, y_up);
    }
  }
  if (!noise.defined()) return mean;
  check_noise(noise, mean.shape(), "p_step");
  return axpby(1.0, mean, std::sqrt(posterior_variance(t, s)), noise);
}

Tensor gaussian(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  Tensor t(std::move(shape));
  for (auto& v : t.data_mut()) v = d(rng);
  return t;
}

SampleResult sample(const Tensor& degraded, const Denoiser& f, const NoiseSchedule& s, std::uint64_t seed,
                    const SampleOptions& opt) {
  if (degraded.rank() != 4) throw ShapeError("sample expects [N,C,H,W], got " + shape_str(degraded.shape()));
  const int T = s.steps();
  std::mt19937_64 streams(seed);
  SampleResult res;
  Tensor y;
  if (opt.init.defined()) {
    y = opt.init;
  } else {
    Tensor d = downscale(degraded, s.scale_at(T));
    y = q_sample(degraded, T, s, gaussian(d.shape(), streams()));
  }
  for (int t = T; t >= 1; --t) {
    res.step_shapes.push_back(y.shape());
    Shape next = y.shape();
    const int ratio = s.scale_at(t) / s.scale_at(t - 1);
    next[2] *= ratio;
    next[3] *= ratio;
    Tensor noise;
    const std::uint64_t step_seed = streams();
    if (opt.stochastic && opt.step.rule != ReverseRule::Ddim) noise = gaussian(next, step_seed);
    y = p_step(y, t, f, s, opt.step, noise);
  }
  res.step_shapes.push_back(y.shape());
  res.image = opt.out_lo < opt.out_hi ? clamp(y, opt.out_lo, opt.out_hi) : y;
  return res;
}

TrainingPair training_pair(const Tensor& y0, int t, const NoiseSchedule& s, const Tensor& noise) {
  Tensor yt = q_sample(y0, t, s, noise);
  const int ratio = s.scale_at(t) / s.scale_at(t - 1);
  return {upscale(yt, ratio), downscale(y0, s.scale_at(t - 1))};
}

}  // namespace endoir::diffusion
