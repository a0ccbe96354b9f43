#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "endoir/tensor/tensor.hpp"

namespace endoir::diffusion {

// Steps are numbered t = 1..T. Index 0 is the clean end of the chain:
// alpha_bar(0) = 1 and scale(0) = 1.
struct NoiseSchedule {
  std::vector<double> beta;       // beta[t-1]
  std::vector<double> alpha_bar;  // running product of (1 - beta)
  std::vector<int> scales;        // r_t, resolution divisor at step t

  int steps() const { return static_cast<int>(beta.size()); }
  double beta_at(int t) const;
  double alpha_bar_at(int t) const;
  int scale_at(int t) const;

  // Validates ranges, monotonicity and the {1,2} ratio rule.
  static NoiseSchedule from_betas(std::vector<double> betas, std::vector<int> scales);
};

// Linear beta ramp. pyramid_levels lists resolution divisors for equal
// consecutive step ranges in increasing t, e.g. {1, 2}: first half at full
// resolution, second (noisier) half at half resolution.
NoiseSchedule make_schedule(int T, double beta_start, double beta_end, const std::vector<int>& pyramid_levels);

// Spatial size of a base-resolution image at divisor r.
std::int64_t resolution_at(std::int64_t base, int r);

// Area-average by `factor` (1 = copy) and bilinear by `factor`.
Tensor downscale(const Tensor& y, int factor);
Tensor upscale(const Tensor& y, int factor);

// One forward step y_{t-1} -> y_t: sqrt(1 - beta_t) * down(y_prev) + sqrt(beta_t) * noise,
// with down by r_t / r_{t-1}.
Tensor q_sample_step(const Tensor& y_prev, int t, const NoiseSchedule& s, const Tensor& noise);
// Closed form from the clean base image: sqrt(abar_t) down(y0, r_t) + sqrt(1 - abar_t) eps.
Tensor q_sample(const Tensor& y0, int t, const NoiseSchedule& s, const Tensor& noise);

// f_theta: takes y_t upsampled to the resolution of step t-1 and the step
// index; returns the clean-image estimate at that resolution. The degraded
// image and any other conditioning are bound into the callable.
using Denoiser = std::function<Tensor(const Tensor& y_in, int t)>;

enum class ReverseRule {
  // mean = sqrt(abar_{t-1}) f + (1 - abar_{t-1}) / (1 - abar_t) * y_up, as printed.
  PrintedMean,
  // DDPM posterior q(y_{t-1} | y_t, y0 = f): the coefficients the printed
  // mean is a truncation of. Same variance.
  Posterior,
  // Deterministic DDIM update through the implied noise estimate.
  Ddim,
};

struct StepOptions {
  ReverseRule rule = ReverseRule::PrintedMean;
  // Clip f to [lo, hi] before use; disabled when lo >= hi.
  double clip_lo = 0.0, clip_hi = 0.0;
};

double posterior_variance(int t, const NoiseSchedule& s);

// Reverse step. `noise` undefined selects the zero-variance mode; otherwise
// it is scaled by the posterior standard deviation (ignored by Ddim).
Tensor p_step(const Tensor& y_t, int t, const Denoiser& f, const NoiseSchedule& s, const StepOptions& opt = {},
              const Tensor& noise = Tensor());

struct SampleOptions {
  StepOptions step;
  bool stochastic = false;
  double out_lo = 0.0, out_hi = 1.0;
  // Starting point; defaults to sqrt(abar_T) down(degraded) + sqrt(1 - abar_T) eps.
  Tensor init;
};

struct SampleResult {
  Tensor image;
  std::vector<Shape> step_shapes;  // shape of y_t for t = T..1, then the output
};

SampleResult sample(const Tensor& degraded, const Denoiser& f, const NoiseSchedule& s, std::uint64_t seed,
                    const SampleOptions& opt = {});

struct TrainingPair {
  Tensor input;   // up(y_t) at the resolution of step t-1
  Tensor target;  // down(y0, r_{t-1})
};

TrainingPair training_pair(const Tensor& y0, int t, const NoiseSchedule& s, const Tensor& noise);

// Standard-normal tensor from a seeded engine.
Tensor gaussian(Shape shape, std::uint64_t seed);

}  // namespace endoir::diffusion
