#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "endoir/tensor/tensor.hpp"

namespace endoir::metrics {

// 10 log10(peak^2 / MSE); identical inputs give +infinity.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};
// Mean local SSIM over valid Gaussian-window positions, averaged over
// channels. Images are [C,H,W] (or [H,W]); returns a value in [-1, 1].
double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt = {});

inline constexpr double kWilksRidge = 1e-9;

struct WilksResult {
  double lambda = 1.0;
  bool regularized = false;  // ridge kWilksRidge * I added to both scatters
};
// det(W) / det(W + B) for row vectors grouped by integer label.
WilksResult wilks_lambda(const std::vector<std::vector<double>>& vectors, const std::vector<int>& labels);

// ---- reports -----------------------------------------------------------------

struct ImageScore {
  std::string name;
  std::string kind;  // "" when unknown
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricRow {
  std::string label;  // kind name or "average"
  std::size_t count = 0;
  double psnr_db = 0.0;
  double ssim = 0.0;  // [0,1] scale; ssim_pct = 100 * ssim
};

struct MetricReport {
  std::vector<MetricRow> kinds;  // sorted by label; empty without kinds
  MetricRow average;  // mean of the kind rows when kinds are known, else of all images
  std::size_t samples = 0;
};

MetricReport build_report(const std::vector<ImageScore>& scores);
// One line per row: label=<l> count=<n> psnr_db=<v> ssim=<v> ssim_pct=<v>
std::string report_key_value(const MetricReport& r);
std::string report_json(const MetricReport& r, const std::vector<ImageScore>& scores);

}  // namespace endoir::metrics
