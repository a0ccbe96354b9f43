#include "endoir/metrics/metrics.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace endoir::metrics {

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto x = a.data(), y = b.data();
  double se = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) se += (x[i] - y[i]) * (x[i] - y[i]);
  const double mse = se / static_cast<double>(x.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const Tensor& a, const Tensor& b, const SsimOptions& opt) {
  if (a.shape() != b.shape()) throw ShapeError("ssim: shapes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  if (a.rank() != 2 && a.rank() != 3) throw ShapeError("ssim: expected [C,H,W] or [H,W], got " + shape_str(a.shape()));
  const std::int64_t c = a.rank() == 3 ? a.size(0) : 1;
  const std::int64_t h = a.size(a.rank() - 2), w = a.size(a.rank() - 1);
  const int k = opt.window;
  if (k < 1 || h < k || w < k) {
    throw ValueError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the " +
                     std::to_string(k) + "x" + std::to_string(k) + " window");
  }
  std::vector<double> g(static_cast<std::size_t>(k));
  double gs = 0;
  for (int i = 0; i < k; ++i) {
    const double d = i - (k - 1) / 2.0;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * opt.sigma * opt.sigma));
    gs += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= gs;
  const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak), c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
  const std::int64_t oh = h - k + 1, ow = w - k + 1;
  auto x = a.data(), y = b.data();
  double total = 0.0;
  // Separable filtering of the five moment maps.
  std::vector<double> rows(static_cast<std::size_t>(5 * h * ow));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const double* xa = x.data() + ch * h * w;
    const double* ya = y.data() + ch * h * w;
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        double m[5] = {0, 0, 0, 0, 0};
        for (int t = 0; t < k; ++t) {
          const double gv = g[static_cast<std::size_t>(t)];
          const double p = xa[i * w + j + t], q = ya[i * w + j + t];
          m[0] += gv * p;
          m[1] += gv * q;
          m[2] += gv * p * p;
          m[3] += gv * q * q;
          m[4] += gv * (p * q);
        }
        for (int s = 0; s < 5; ++s) rows[static_cast<std::size_t>((s * h + i) * ow + j)] = m[s];
      }
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j) {
        double m[5] = {0, 0, 0, 0, 0};
        for (int t = 0; t < k; ++t)
          for (int s = 0; s < 5; ++s) m[s] += g[static_cast<std::size_t>(t)] * rows[static_cast<std::size_t>((s * h + i + t) * ow + j)];
        const double vx = m[2] - m[0] * m[0], vy = m[3] - m[1] * m[1], cxy = m[4] - m[0] * m[1];
        total += ((2.0 * (m[0] * m[1]) + c1) * (2 * cxy + c2)) / ((m[0] * m[0] + m[1] * m[1] + c1) * (vx + vy + c2));
      }
  }
  return total / static_cast<double>(c * oh * ow);
}

WilksResult wilks_lambda(const std::vector<std::vector<double>>& vectors, const std::vector<int>& labels) {
  if (vectors.size() != labels.size()) throw ValueError("wilks_lambda: vectors and labels differ in count");
  if (vectors.empty()) throw ValueError("wilks_lambda: no vectors");
  const auto d = static_cast<Eigen::Index>(vectors[0].size());
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (static_cast<Eigen::Index>(vectors[i].size()) != d) throw ValueError("wilks_lambda: ragged embedding widths");
    groups[labels[i]].push_back(i);
  }
  if (groups.size() < 2) throw ValueError("wilks_lambda: need at least 2 labels");
  for (const auto& [l, idx] : groups) {
    if (idx.size() < 2) throw ValueError("wilks_lambda: label " + std::to_string(l) + " has fewer than 2 vectors");
  }
  if (static_cast<Eigen::Index>(vectors.size()) <= d) throw ValueError("wilks_lambda: need more vectors than dimensions");

  auto row = [&](std::size_t i) { return Eigen::Map<const Eigen::VectorXd>(vectors[i].data(), d); };
  Eigen::VectorXd grand = Eigen::VectorXd::Zero(d);
  for (std::size_t i = 0; i < vectors.size(); ++i) grand += row(i);
  grand /= static_cast<double>(vectors.size());
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(d, d), B = Eigen::MatrixXd::Zero(d, d);
  for (const auto& [l, idx] : groups) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    for (auto i : idx) mu += row(i);
    mu /= static_cast<double>(idx.size());
    for (auto i : idx) {
      const Eigen::VectorXd r = row(i) - mu;
      W.noalias() += r * r.transpose();
    }
    const Eigen::VectorXd m = mu - grand;
    B.noalias() += static_cast<double>(idx.size()) * m * m.transpose();
  }
  Eigen::MatrixXd T = W + B;
  WilksResult res;
  auto logdet = [](const Eigen::MatrixXd& M, bool& ok) {
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    ok = llt.info() == Eigen::Success;
    if (!ok) return 0.0;
    const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
    double s = 0;
    for (Eigen::Index i = 0; i < diag.size(); ++i) {
      if (!(diag[i] > 0)) ok = false;
      s += 2.0 * std::log(diag[i]);
    }
    return s;
  };
  bool okw = false, okt = false;
  double lw = logdet(W, okw), lt = logdet(T, okt);
  if (!okw || !okt) {
    res.regularized = true;
    const Eigen::MatrixXd ridge = kWilksRidge * Eigen::MatrixXd::Identity(d, d);
    lw = logdet(W + ridge, okw);
    lt = logdet(T + ridge, okt);
    if (!okw || !okt) throw ValueError("wilks_lambda: scatter not positive definite after ridge");
  }
  res.lambda = std::min(1.0, std::exp(lw - lt));
  return res;
}

MetricReport build_report(const std::vector<ImageScore>& scores) {
  MetricReport r;
  r.samples = scores.size();
  std::map<std::string, std::vector<const ImageScore*>> by_kind;
  bool any_kind = false;
  for (const auto& s : scores) {
    if (!s.kind.empty()) any_kind = true;
    by_kind[s.kind].push_back(&s);
  }
  auto mean_row = [](const std::string& label, const std::vector<const ImageScore*>& v) {
    MetricRow row{label, v.size(), 0.0, 0.0};
    for (const auto* s : v) {
      row.psnr_db += s->psnr_db;
      row.ssim += s->ssim;
    }
    if (!v.empty()) {
      row.psnr_db /= static_cast<double>(v.size());
      row.ssim /= static_cast<double>(v.size());
    }
    return row;
  };
  if (any_kind) {
    r.average = {"average", scores.size(), 0.0, 0.0};
    for (const auto& [kind, v] : by_kind) {
      r.kinds.push_back(mean_row(kind.empty() ? "unknown" : kind, v));
      r.average.psnr_db += r.kinds.back().psnr_db;
      r.average.ssim += r.kinds.back().ssim;
    }
    r.average.psnr_db /= static_cast<double>(r.kinds.size());
    r.average.ssim /= static_cast<double>(r.kinds.size());
  } else {
    std::vector<const ImageScore*> all;
    for (const auto& s : scores) all.push_back(&s);
    r.average = mean_row("average", all);
  }
  return r;
}

namespace {
std::string num(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

nlohmann::json num_json(double v) {
  if (std::isfinite(v)) return v;
  return v > 0 ? "inf" : "-inf";
}
}  // namespace

std::string report_key_value(const MetricReport& r) {
  std::ostringstream os;
  auto line = [&](const MetricRow& row) {
    os << "label=" << row.label << " count=" << row.count << " psnr_db=" << num(row.psnr_db) << " ssim=" << num(row.ssim)
       << " ssim_pct=" << num(100.0 * row.ssim) << '\n';
  };
  for (const auto& row : r.kinds) line(row);
  line(r.average);
  return os.str();
}

std::string report_json(const MetricReport& r, const std::vector<ImageScore>& scores) {
  auto row_json = [](const MetricRow& row) {
    return nlohmann::json{{"label", row.label},
                          {"count", row.count},
                          {"psnr_db", num_json(row.psnr_db)},
                          {"ssim", num_json(row.ssim)},
                          {"ssim_pct", num_json(100.0 * row.ssim)}};
  };
  nlohmann::json j;
  j["samples"] = r.samples;
  j["kinds"] = nlohmann::json::array();
  for (const auto& row : r.kinds) j["kinds"].push_back(row_json(row));
  j["average"] = row_json(r.average);
  j["images"] = nlohmann::json::array();
  for (const auto& s : scores) {
    j["images"].push_back({{"name", s.name}, {"kind", s.kind}, {"psnr_db", num_json(s.psnr_db)}, {"ssim", num_json(s.ssim)}});
  }
  return j.dump(2) + "\n";
}

}  // namespace endoir::metrics
