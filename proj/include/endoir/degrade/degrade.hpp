#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "endoir/tensor/tensor.hpp"

namespace endoir::degrade {

enum class Kind { LowLight, Smoke, Blood };

const char* kind_name(Kind k);  // "lowlight", "smoke", "blood"
Kind parse_kind(const std::string& s);
inline constexpr Kind kAllKinds[] = {Kind::LowLight, Kind::Smoke, Kind::Blood};

using ParamList = std::vector<std::pair<std::string, double>>;

struct DegradationSample {
  Tensor clean;     // [3,H,W] in [0,1]
  Tensor degraded;  // [3,H,W] in [0,1]
  Kind kind = Kind::LowLight;
  ParamList params;
};

// Procedural frame: smooth tissue-coloured fields, dark curvilinear vessels
// and a few specular highlights. H and W must be powers of two.
Tensor gen_clean(std::uint64_t seed, std::int64_t h, std::int64_t w);

struct LowLightParams {
  double gain = 0.35;
  double gamma_curve = 1.5;
  double noise_sigma = 0.02;
};
// clamp((gain * clean)^gamma_curve + N(0, sigma))
DegradationSample apply_low_light(const Tensor& clean, const LowLightParams& p, std::uint64_t seed);

struct SmokeParams {
  double veil = 0.85;
  double t_min = 0.25;  // range of the generated transmission field
  double t_max = 0.65;
};
// Smooth seeded transmission map [H,W] with values in [t_min, t_max].
Tensor smoke_transmission(std::uint64_t seed, std::int64_t h, std::int64_t w, double t_min, double t_max);
// clean * t + veil * (1 - t); t is [H,W] in [0,1].
DegradationSample apply_smoke(const Tensor& clean, double veil, const Tensor& transmission);
DegradationSample apply_smoke(const Tensor& clean, const SmokeParams& p, std::uint64_t seed);

struct BloodParams {
  int blob_count = 4;
  double opacity = 0.85;
  double radius_min = 0.12;  // fraction of min(H, W)
  double radius_max = 0.28;
};
inline constexpr double kBloodColor[3] = {0.42, 0.04, 0.05};
// Alpha-composites smooth blobs of kBloodColor; params record the fraction
// of pixels with non-zero coverage as "covered_fraction".
DegradationSample apply_blood(const Tensor& clean, const BloodParams& p, std::uint64_t seed);

// Per-kind parameter draw used for dataset generation.
DegradationSample degrade_random(const Tensor& clean, Kind kind, std::uint64_t seed);

// ---- spectra ---------------------------------------------------------------

struct BandEnergy {
  double dc = 0.0;    // |X(0,0)|^2 summed over channels
  double low = 0.0;   // fractions of the non-DC energy
  double mid = 0.0;
  double high = 0.0;
};
// Radial frequency rho = sqrt((kx/W)^2 + (ky/H)^2) in cycles per pixel;
// low: 0 < rho <= 1/8, mid: 1/8 < rho <= 1/4, high: rho > 1/4.
BandEnergy band_energy(const Tensor& image);

}  // namespace endoir::degrade
