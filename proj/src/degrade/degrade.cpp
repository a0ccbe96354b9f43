#include "endoir/degrade/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "endoir/tensor/ops.hpp"

namespace endoir::degrade {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Explicit uniform/normal draws so datasets don't depend on the standard
// library's distribution implementations.
struct Rng {
  std::mt19937_64 eng;
  explicit Rng(std::uint64_t seed) : eng(seed) {}
  double uniform() { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(eng() % static_cast<std::uint64_t>(hi - lo + 1)); }
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * uniform());
  }
};

bool power_of_two(std::int64_t v) { return v > 0 && (v & (v - 1)) == 0; }

std::int64_t next_pow2(std::int64_t v) {
  std::int64_t p = 1;
  while (p < v) p <<= 1;
  return p;
}

void check_image(const Tensor& img, const char* op) {
  if (img.rank() != 3 || img.size(0) != 3) throw ShapeError(std::string(op) + ": expected [3,H,W], got " + shape_str(img.shape()));
}

double smoothstep(double e) {
  e = std::clamp(e, 0.0, 1.0);
  return e * e * (3.0 - 2.0 * e);
}

// Sum of a few random low-frequency plane waves, roughly in [-1, 1].
struct WaveField {
  struct Wave {
    double kx, ky, phase, amp;
  };
  std::vector<Wave> waves;
  WaveField(Rng& rng, int count, double max_cycles) {
    double total = 0;
    for (int i = 0; i < count; ++i) {
      const double ang = rng.uniform(0, kTwoPi), f = rng.uniform(0.5, max_cycles);
      waves.push_back({f * std::cos(ang), f * std::sin(ang), rng.uniform(0, kTwoPi), rng.uniform(0.5, 1.0)});
      total += waves.back().amp;
    }
    for (auto& w : waves) w.amp /= total;
  }
  double operator()(double u, double v) const {
    double s = 0;
    for (const auto& w : waves) s += w.amp * std::cos(kTwoPi * (w.kx * u + w.ky * v) + w.phase);
    return s;
  }
};

}  // namespace

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::LowLight: return "lowlight";
    case Kind::Smoke: return "smoke";
    case Kind::Blood: return "blood";
  }
  return "?";
}

Kind parse_kind(const std::string& s) {
  for (Kind k : kAllKinds)
    if (s == kind_name(k)) return k;
  throw ValueError("unknown degradation kind '" + s + "' (lowlight, smoke, blood)");
}

Tensor gen_clean(std::uint64_t seed, std::int64_t h, std::int64_t w) {
  if (!power_of_two(h) || !power_of_two(w)) {
    throw ValueError("image size " + std::to_string(h) + "x" + std::to_string(w) + " must be powers of two; pad to " +
                     std::to_string(next_pow2(h)) + "x" + std::to_string(next_pow2(w)));
  }
  Rng rng(seed);
  const double base[3] = {rng.uniform(0.62, 0.85), rng.uniform(0.25, 0.42), rng.uniform(0.2, 0.35)};
  std::vector<WaveField> tone;
  for (int c = 0; c < 3; ++c) tone.emplace_back(rng, 4, 3.0);
  WaveField shade(rng, 3, 1.5);

  struct Vessel {
    double x0, y0, x1, y1, cx, cy, width, depth;
  };
  std::vector<Vessel> vessels;
  const int nv = rng.integer(2, 5);
  for (int i = 0; i < nv; ++i) {
    vessels.push_back({rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform(-0.2, 1.2),
                       rng.uniform(-0.2, 1.2), rng.uniform(0.008, 0.025), rng.uniform(0.3, 0.6)});
  }
  struct Spot {
    double x, y, r, a;
  };
  std::vector<Spot> spots;
  const int ns = rng.integer(1, 4);
  for (int i = 0; i < ns; ++i) spots.push_back({rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.01, 0.03), rng.uniform(0.5, 0.9)});

  // Vessel distance via a polyline sampling of each quadratic Bezier.
  constexpr int kSeg = 48;
  std::vector<std::vector<std::pair<double, double>>> paths;
  for (const auto& v : vessels) {
    std::vector<std::pair<double, double>> pts;
    for (int s = 0; s <= kSeg; ++s) {
      const double t = static_cast<double>(s) / kSeg, a = (1 - t) * (1 - t), b = 2 * t * (1 - t), c = t * t;
      pts.emplace_back(a * v.x0 + b * v.cx + c * v.x1, a * v.y0 + b * v.cy + c * v.y1);
    }
    paths.push_back(std::move(pts));
  }

  Tensor out({3, h, w});
  auto d = out.data_mut();
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(w);
      const double v = (static_cast<double>(i) + 0.5) / static_cast<double>(h);
      const double r2 = (u - 0.5) * (u - 0.5) + (v - 0.5) * (v - 0.5);
      const double light = (1.0 - 0.9 * r2) * (1.0 + 0.12 * shade(u, v));
      double px[3];
      for (int c = 0; c < 3; ++c) px[c] = base[c] * light * (1.0 + 0.15 * tone[static_cast<std::size_t>(c)](u, v));
      for (std::size_t k = 0; k < vessels.size(); ++k) {
        double best = 1e9;
        const auto& pts = paths[k];
        for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
          const double ax = pts[s].first, ay = pts[s].second, bx = pts[s + 1].first, by = pts[s + 1].second;
          const double dx = bx - ax, dy = by - ay, len2 = dx * dx + dy * dy;
          const double t = len2 > 0 ? std::clamp(((u - ax) * dx + (v - ay) * dy) / len2, 0.0, 1.0) : 0.0;
          const double ex = ax + t * dx - u, ey = ay + t * dy - v;
          best = std::min(best, ex * ex + ey * ey);
        }
        const double prof = std::exp(-best / (2 * vessels[k].width * vessels[k].width));
        const double dep = vessels[k].depth * prof;
        px[0] *= 1.0 - 0.6 * dep;
        px[1] *= 1.0 - dep;
        px[2] *= 1.0 - 0.8 * dep;
      }
      for (const auto& s : spots) {
        const double e2 = (u - s.x) * (u - s.x) + (v - s.y) * (v - s.y);
        const double a = s.a * std::exp(-e2 / (2 * s.r * s.r));
        for (double& p : px) p = p + a * (1.0 - p);
      }
      for (int c = 0; c < 3; ++c) d[(c * h + i) * w + j] = std::clamp(px[c], 0.0, 1.0);
    }
  return out;
}

DegradationSample apply_low_light(const Tensor& clean, const LowLightParams& p, std::uint64_t seed) {
  check_image(clean, "apply_low_light");
  if (!(p.gain > 0.0 && p.gain <= 1.0)) throw ValueError("low-light gain must lie in (0,1]");
  if (!(p.gamma_curve > 0.0)) throw ValueError("low-light gamma_curve must be > 0");
  if (!(p.noise_sigma >= 0.0)) throw ValueError("low-light noise_sigma must be >= 0");
  Rng rng(seed);
  DegradationSample s{clean.clone(), Tensor(clean.shape()), Kind::LowLight,
                      {{"gain", p.gain}, {"gamma_curve", p.gamma_curve}, {"noise_sigma", p.noise_sigma}}};
  auto in = clean.data();
  auto out = s.degraded.data_mut();
  for (std::size_t i = 0; i < in.size(); ++i) {
    double v = std::pow(p.gain * in[i], p.gamma_curve);
    if (p.noise_sigma > 0.0) v += p.noise_sigma * rng.normal();
    out[i] = std::clamp(v, 0.0, 1.0);
  }
  return s;
}

Tensor smoke_transmission(std::uint64_t seed, std::int64_t h, std::int64_t w, double t_min, double t_max) {
  if (!(t_min >= 0.0 && t_max <= 1.0 && t_min <= t_max)) throw ValueError("transmission range must lie in [0,1]");
  Rng rng(seed);
  WaveField field(rng, 5, 2.0);
  Tensor t({h, w});
  auto d = t.data_mut();
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      const double u = (static_cast<double>(j) + 0.5) / static_cast<double>(w);
      const double v = (static_cast<double>(i) + 0.5) / static_cast<double>(h);
      d[i * w + j] = t_min + (t_max - t_min) * 0.5 * (1.0 + field(u, v));
    }
  return t;
}

DegradationSample apply_smoke(const Tensor& clean, double veil, const Tensor& transmission) {
  check_image(clean, "apply_smoke");
  if (!(veil >= 0.0 && veil <= 1.0)) throw ValueError("smoke veil must lie in [0,1]");
  const auto h = clean.size(1), w = clean.size(2);
  if (transmission.shape() != Shape{h, w}) {
    throw ShapeError("apply_smoke: transmission " + shape_str(transmission.shape()) + " for image " + shape_str(clean.shape()));
  }
  auto t = transmission.data();
  double mean_t = 0.0;
  for (double v : t) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValueError("transmission must lie in [0,1] everywhere");
    mean_t += v;
  }
  mean_t /= static_cast<double>(t.size());
  DegradationSample s{clean.clone(), Tensor(clean.shape()), Kind::Smoke, {{"veil", veil}, {"mean_transmission", mean_t}}};
  auto in = clean.data();
  auto out = s.degraded.data_mut();
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t k = 0; k < h * w; ++k) {
      const auto i = static_cast<std::size_t>(c * h * w + k);
      out[i] = std::clamp(in[i] * t[static_cast<std::size_t>(k)] + veil * (1.0 - t[static_cast<std::size_t>(k)]), 0.0, 1.0);
    }
  return s;
}

DegradationSample apply_smoke(const Tensor& clean, const SmokeParams& p, std::uint64_t seed) {
  check_image(clean, "apply_smoke");
  auto s = apply_smoke(clean, p.veil, smoke_transmission(seed, clean.size(1), clean.size(2), p.t_min, p.t_max));
  s.params.insert(s.params.begin() + 1, {{"t_min", p.t_min}, {"t_max", p.t_max}});
  return s;
}

DegradationSample apply_blood(const Tensor& clean, const BloodParams& p, std::uint64_t seed) {
  check_image(clean, "apply_blood");
  if (p.blob_count < 1) throw ValueError("blood blob_count must be >= 1");
  if (!(p.opacity >= 0.0 && p.opacity <= 1.0)) throw ValueError("blood opacity must lie in [0,1]");
  if (!(p.radius_min > 0.0 && p.radius_min <= p.radius_max)) throw ValueError("blood radius range invalid");
  const auto h = clean.size(1), w = clean.size(2);
  Rng rng(seed);
  struct Blob {
    double x, y, r, sx, sy;
    WaveField edge;
  };
  std::vector<Blob> blobs;
  for (int b = 0; b < p.blob_count; ++b) {
    const double x = rng.uniform(), y = rng.uniform(), r = rng.uniform(p.radius_min, p.radius_max);
    const double sx = rng.uniform(0.7, 1.3), sy = rng.uniform(0.7, 1.3);
    blobs.push_back({x, y, r, sx, sy, WaveField(rng, 3, 2.0)});
  }
  const double scale = static_cast<double>(std::min(h, w));
  Tensor alpha({h, w});
  auto a = alpha.data_mut();
  std::int64_t covered = 0;
  for (std::int64_t i = 0; i < h; ++i)
    for (std::int64_t j = 0; j < w; ++j) {
      // Pixel position in units of min(H, W).
      const double u = (static_cast<double>(j) + 0.5) / scale, v = (static_cast<double>(i) + 0.5) / scale;
      double keep = 1.0;
      for (const auto& b : blobs) {
        const double bx = b.x * static_cast<double>(w) / scale, by = b.y * static_cast<double>(h) / scale;
        const double dx = (u - bx) / b.sx, dy = (v - by) / b.sy;
        const double dist = std::sqrt(dx * dx + dy * dy);
        const double r = b.r * (1.0 + 0.2 * b.edge(dx, dy));
        // Solid core out to 0.7 r, smooth falloff to zero at r.
        keep *= 1.0 - p.opacity * smoothstep((r - dist) / (0.3 * r));
      }
      a[i * w + j] = 1.0 - keep;
      if (a[i * w + j] > 0.0) ++covered;
    }
  DegradationSample s{clean.clone(), Tensor(clean.shape()), Kind::Blood,
                      {{"blob_count", static_cast<double>(p.blob_count)},
                       {"opacity", p.opacity},
                       {"covered_fraction", static_cast<double>(covered) / static_cast<double>(h * w)}}};
  auto in = clean.data();
  auto out = s.degraded.data_mut();
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t k = 0; k < h * w; ++k) {
      const auto i = static_cast<std::size_t>(c * h * w + k);
      const double al = a[static_cast<std::size_t>(k)];
      out[i] = std::clamp((1.0 - al) * in[i] + al * kBloodColor[c], 0.0, 1.0);
    }
  return s;
}

DegradationSample degrade_random(const Tensor& clean, Kind kind, std::uint64_t seed) {
  Rng rng(seed);
  const std::uint64_t op_seed = rng.eng();
  switch (kind) {
    case Kind::LowLight:
      return apply_low_light(clean, {rng.uniform(0.25, 0.5), rng.uniform(1.2, 1.8), rng.uniform(0.01, 0.03)}, op_seed);
    case Kind::Smoke: {
      const double lo = rng.uniform(0.15, 0.35);
      return apply_smoke(clean, {rng.uniform(0.7, 0.95), lo, lo + rng.uniform(0.25, 0.45)}, op_seed);
    }
    case Kind::Blood:
      return apply_blood(clean, {rng.integer(2, 5), rng.uniform(0.7, 0.95), 0.1, 0.25}, op_seed);
  }
  throw ValueError("unknown kind");
}

BandEnergy band_energy(const Tensor& image) {
  check_image(image, "band_energy");
  const auto h = image.size(1), w = image.size(2);
  auto spec = fft2(reshape(image, {1, 3, h, w}));
  auto re = spec.real.data(), im = spec.imag.data();
  BandEnergy e;
  double ac = 0.0;
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const auto at = static_cast<std::size_t>((c * h + i) * w + j);
        const double p = re[at] * re[at] + im[at] * im[at];
        if (i == 0 && j == 0) {
          e.dc += p;
          continue;
        }
        const double fy = static_cast<double>(i <= h / 2 ? i : i - h) / static_cast<double>(h);
        const double fx = static_cast<double>(j <= w / 2 ? j : j - w) / static_cast<double>(w);
        const double rho = std::sqrt(fx * fx + fy * fy);
        (rho <= 0.125 ? e.low : rho <= 0.25 ? e.mid : e.high) += p;
        ac += p;
      }
  if (ac > 0.0) {
    e.low /= ac;
    e.mid /= ac;
    e.high /= ac;
  }
  return e;
}

}  // namespace endoir::degrade
