#include "endoir/pipeline/selftest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>

#include "endoir/diffusion/diffusion.hpp"
#include "endoir/metrics/metrics.hpp"
#include "endoir/model/model.hpp"
#include "endoir/nn/blocks.hpp"
#include "endoir/tensor/gradcheck.hpp"
#include "endoir/tensor/ops.hpp"
#include "endoir/tensor/profile.hpp"

namespace endoir::pipeline {

namespace {

using diffusion::gaussian;

class Suite {
 public:
  explicit Suite(SuiteResult& r) : r_(r) {}
  void check(bool ok, const std::string& what) {
    ++r_.checks;
    if (!ok) {
      r_.passed = false;
      r_.failures.push_back(what);
    }
  }
  void grad(const GradCheckResult& g) {
    std::ostringstream os;
    os << g.name << " rel=" << g.rel_error;
    check(g.passed, os.str());
  }

 private:
  SuiteResult& r_;
};

const GradCheckOptions kOp{.eps = 1e-5, .tolerance = 1e-3, .max_coords_per_tensor = 0};
const GradCheckOptions kBlock{.eps = 1e-5, .tolerance = 1e-3, .max_coords_per_tensor = 24};

Tensor positive(Shape s, std::uint64_t seed) {
  Tensor g = gaussian(std::move(s), seed);
  for (double& v : g.data_mut()) v = 0.5 + std::abs(v);
  return g;
}

double top_margin(const std::vector<nn::RoutingDecision>& ds) {
  double m = 1e300;
  for (const auto& d : ds) {
    std::vector<double> r(d.relevance.data().begin(), d.relevance.data().end());
    std::sort(r.begin(), r.end(), std::greater<>());
    const auto k = d.selected.size();
    if (k < r.size()) m = std::min(m, r[k - 1] - r[k]);
  }
  return m;
}

void gradient_suite(Suite& s) {
  auto op = [&](const std::string& name, std::function<Tensor()> f, std::vector<Tensor> in,
                const GradCheckOptions& o = kOp) { s.grad(grad_check(name, f, std::move(in), o)); };
  Tensor a = gaussian({2, 3, 4}, 1), b = gaussian({2, 3, 4}, 2), row = gaussian({4}, 3);
  op("add", [&] { return random_projection(add(a, row), 1); }, {a, row});
  op("sub", [&] { return random_projection(sub(a, b), 2); }, {a, b});
  op("mul", [&] { return random_projection(mul(a, row), 3); }, {a, row});
  op("mul_scalar", [&] { return random_projection(mul_scalar(a, -1.7), 4); }, {a});
  op("add_scalar", [&] { return random_projection(mul(add_scalar(a, 0.3), b), 5); }, {a});
  op("gelu", [&] { return random_projection(gelu(a), 6); }, {a});
  Tensor p = positive({2, 5}, 4);
  op("sqrt", [&] { return random_projection(sqrt(p), 7); }, {p});
  op("log1p", [&] { return random_projection(log1p(p), 8); }, {p});
  op("sum", [&] { return mul(sum(mul(a, a)), sum(b)); }, {a, b});
  op("mse_loss", [&] { return mse_loss(a, b); }, {a, b});
  op("reshape", [&] { return random_projection(mul(reshape(a, {6, 4}), reshape(b, {6, 4})), 9); }, {a});
  op("narrow", [&] { return random_projection(narrow(a, 1, 1, 2), 10); }, {a});
  op("concat", [&] { return random_projection(concat({a, b}, 2), 11); }, {a, b});
  Tensor img = gaussian({2, 4, 4, 4}, 5);
  op("index_select", [&] { return random_projection(index_select(img, 1, {3, 0}), 12); }, {img});
  Tensor payload = gaussian({2, 2, 4, 4}, 6);
  op("index_scatter", [&] { return random_projection(index_scatter(img, payload, 1, {2, 1}), 13); }, {img, payload});
  Tensor m1 = gaussian({3, 4}, 7), m2 = gaussian({4, 5}, 8), m2t = gaussian({5, 4}, 9), m1t = gaussian({4, 3}, 10);
  op("matmul", [&] { return random_projection(matmul(m1, m2), 14); }, {m1, m2});
  op("matmul_tb", [&] { return random_projection(matmul(m1, m2t, false, true), 15); }, {m1, m2t});
  op("matmul_ta", [&] { return random_projection(matmul(m1t, m2, true, false), 16); }, {m1t, m2});
  Tensor ba = gaussian({2, 3, 4}, 11), bb = gaussian({2, 5, 4}, 12);
  op("matmul_batched", [&] { return random_projection(matmul(ba, bb, false, true), 17); }, {ba, bb});
  Tensor lw = gaussian({5, 4}, 13), lb = gaussian({5}, 14);
  op("linear", [&] { return random_projection(linear(m1, lw, lb), 18); }, {m1, lw, lb});
  Tensor x = gaussian({2, 3, 6, 6}, 15), k = gaussian({4, 3, 3, 3}, 16), kb = gaussian({4}, 17);
  op("conv2d", [&] { return random_projection(conv2d(x, k, kb, 1, 1), 19); }, {x, k, kb});
  op("conv2d_stride2", [&] { return random_projection(conv2d(x, k, kb, 2, 1), 20); }, {x, k, kb});
  Tensor dk = gaussian({3, 1, 3, 3}, 18), db = gaussian({3}, 19);
  op("depthwise_conv2d", [&] { return random_projection(depthwise_conv2d(x, dk, db, 1), 21); }, {x, dk, db});
  Tensor g = gaussian({3}, 20), sh = gaussian({3}, 21);
  op("layer_norm", [&] { return random_projection(layer_norm(x, {1}, g, sh, 1e-5), 22); }, {x, g, sh});
  op("softmax", [&] { return random_projection(softmax(x, 1), 23); }, {x});
  op("adaptive_avg_pool", [&] { return random_projection(adaptive_avg_pool(x), 24); }, {x});
  op("resize_bilinear", [&] { return random_projection(resize_bilinear(x, 2.0), 25); }, {x});
  op("resize_bilinear_down", [&] { return random_projection(resize_bilinear(x, 0.5), 26); }, {x});
  op("area_downsample", [&] { return random_projection(area_downsample(x, 2), 27); }, {x});
  Tensor f = gaussian({1, 2, 4, 8}, 22), fi = gaussian({1, 2, 4, 8}, 23);
  op("fft2", [&] {
    auto c = fft2(f);
    return add(random_projection(c.real, 28), random_projection(c.imag, 29));
  }, {f});
  op("ifft2", [&] {
    auto c = ifft2({f, fi});
    return add(random_projection(c.real, 30), random_projection(c.imag, 31));
  }, {f, fi});

  auto params_plus = [](const nn::ParameterSet& ps, std::vector<Tensor> extra) {
    std::vector<Tensor> out;
    for (const auto& e : ps.entries()) out.push_back(e.second);
    out.insert(out.end(), extra.begin(), extra.end());
    return out;
  };
  {
    nn::ParameterSet ps;
    nn::Init init(9);
    nn::PromptDictionary dict(ps, "dict", 3, 4, init);
    nn::DdpStems stems(ps, "ddp", 3, 3, init);
    Tensor in = gaussian({2, 3, 4, 4}, 24);
    op("ddp", [&] { return random_projection(nn::ddp_forward(in, dict, stems), 32); }, params_plus(ps, {in}), kBlock);
  }
  {
    nn::ParameterSet ps;
    nn::Init init(17);
    nn::TaskAdaptiveEmbedding tae(ps, "tae", 6, 5, 8, 1, 4, 2, init);
    Tensor pr = gaussian({2, 6}, 25);
    op("tae", [&] { return random_projection(nn::tae_forward(pr, tae), 33); }, params_plus(ps, {pr}), kBlock);
  }
  {
    nn::ParameterSet ps;
    nn::Init init(28);
    nn::DseStage st(ps, "dse", 4, init);
    Tensor fx = gaussian({2, 4, 4, 4}, 26), fy = gaussian({2, 4, 4, 4}, 27);
    op("dse", [&] {
      auto [u, v] = nn::dse_forward(fx, fy, st);
      return add(random_projection(u, 34), random_projection(v, 35));
    }, params_plus(ps, {fx, fy}), kBlock);
  }
  {
    nn::ParameterSet ps;
    nn::Init init(35);
    nn::RectifiedFusion rfb(ps, "rfb", 4, init);
    rfb.w1.data_mut()[0] = 0.7;
    rfb.w2.data_mut()[0] = 0.4;
    Tensor fx = gaussian({2, 4, 4, 4}, 28), fy = gaussian({2, 4, 4, 4}, 29);
    op("rfb", [&] { return random_projection(nn::rfb_forward(fx, fy, rfb), 36); }, params_plus(ps, {fx, fy}), kBlock);
  }
  {
    nn::ParameterSet ps;
    nn::Init init(47);
    nn::NoiseAwareRouting narb(ps, "narb", 8, 4, 2, init);
    Tensor in = gaussian({2, 8, 4, 4}, 30), cond = gaussian({2, 4}, 31);
    s.check(top_margin(nn::narb_forward(in, cond, 0.5, narb).decisions) > 1e-6, "narb selection margin");
    op("narb", [&] { return random_projection(nn::narb_forward(in, cond, 0.5, narb).out, 37); },
       params_plus(ps, {in, cond}), kBlock);
  }
  {
    model::ModelConfig c;
    c.depth = 2;
    c.base_channels = 8;
    c.steps = 8;
    c.seed = 11;
    model::EndoIRModel m(c);
    std::mt19937_64 rng(21);
    std::normal_distribution<double> nd(0.0, 0.1);
    for (auto& e : m.params().entries()) {
      Tensor t = e.second;
      for (double& v : t.data_mut()) v = nd(rng);
    }
    Tensor yin = gaussian({1, 3, 16, 16}, 32), xd = gaussian({1, 3, 16, 16}, 33);
    model::ForwardTrace tr;
    m.denoise(yin, xd, 3, &tr);
    double margin = 1e300;
    for (const auto& st : tr.routing) margin = std::min(margin, top_margin(st));
    s.check(margin > 1e-7, "denoiser selection margin");
    op("denoiser", [&] { return random_projection(m.denoise(yin, xd, 3), 38); }, params_plus(m.params(), {yin, xd}),
       GradCheckOptions{.eps = 1e-5, .tolerance = 1e-3, .max_coords_per_tensor = 4});
  }
}

void fft_suite(Suite& s) {
  const std::int64_t H = 4, W = 8;
  Tensor x = gaussian({1, 1, H, W}, 41);
  auto X = fft2(x);
  double worst = 0;
  for (std::int64_t u = 0; u < H; ++u)
    for (std::int64_t v = 0; v < W; ++v) {
      double re = 0, im = 0;
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          const double ang = -2 * M_PI * (static_cast<double>(u * i) / H + static_cast<double>(v * j) / W);
          re += x.data()[i * W + j] * std::cos(ang);
          im += x.data()[i * W + j] * std::sin(ang);
        }
      worst = std::max({worst, std::abs(re - X.real.data()[u * W + v]), std::abs(im - X.imag.data()[u * W + v])});
    }
  s.check(worst < 1e-12, "fft2 vs direct DFT");
  double e_space = 0, e_freq = 0;
  for (double v : x.data()) e_space += v * v;
  for (std::size_t i = 0; i < X.real.data().size(); ++i) e_freq += X.real.data()[i] * X.real.data()[i] + X.imag.data()[i] * X.imag.data()[i];
  s.check(std::abs(e_freq / (H * W) - e_space) < 1e-10, "Parseval");
  auto back = ifft2(X);
  double rt = 0;
  for (std::size_t i = 0; i < x.data().size(); ++i) rt = std::max(rt, std::abs(back.real.data()[i] - x.data()[i]));
  s.check(rt < 1e-12, "ifft2(fft2(x)) == x");
  Tensor imp({1, 1, H, W}, 0.0);
  imp.data_mut()[0] = 1.0;
  auto I = fft2(imp);
  bool flat = true;
  for (std::size_t i = 0; i < I.real.data().size(); ++i) flat = flat && I.real.data()[i] == 1.0 && I.imag.data()[i] == 0.0;
  s.check(flat, "impulse has a flat spectrum");
  bool threw = false;
  try {
    fft2(Tensor({1, 1, 6, 8}));
  } catch (const ShapeError&) {
    threw = true;
  }
  s.check(threw, "non power-of-two size rejected");
}

void routing_suite(Suite& s) {
  std::mt19937_64 rng(77);
  int bad_count = 0, bad_keep = 0, bad_dense = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t C = 1 + static_cast<std::int64_t>(rng() % 16);
    const double gamma = (1 + static_cast<double>(rng() % 1000)) / 1000.0;
    nn::ParameterSet ps;
    nn::Init init(rng());
    nn::NoiseAwareRouting narb(ps, "n", C, 4, 1 + static_cast<int>(rng() % 2), init);
    Tensor x = gaussian({1, C, 4, 4}, rng()), cond = gaussian({1, 4}, rng());
    auto out = nn::narb_forward(x, cond, gamma, narb);
    const auto& sel = out.decisions[0].selected;
    const auto want = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(gamma * static_cast<double>(C))));
    if (static_cast<std::int64_t>(sel.size()) != want) ++bad_count;
    Tensor dense = nn::dense_refine(x, narb);
    for (std::int64_t c = 0; c < C; ++c) {
      const bool routed = std::find(sel.begin(), sel.end(), c) != sel.end();
      for (std::int64_t i = 0; i < 16; ++i) {
        const auto at = static_cast<std::size_t>(c * 16 + i);
        if (!routed && out.out.data()[at] != x.data()[at]) ++bad_keep;
        if (routed && out.out.data()[at] != dense.data()[at]) ++bad_dense;
      }
    }
    if (trial % 10 == 0) {
      auto full = nn::narb_forward(x, cond, 1.0, narb);
      if (!std::equal(full.out.data().begin(), full.out.data().end(), dense.data().begin())) ++bad_dense;
      for (auto& rb : narb.res) {
        std::fill(rb.w2.data_mut().begin(), rb.w2.data_mut().end(), 0.0);
        std::fill(rb.b2.data_mut().begin(), rb.b2.data_mut().end(), 0.0);
      }
      auto ident = nn::narb_forward(x, cond, gamma, narb);
      if (!std::equal(ident.out.data().begin(), ident.out.data().end(), x.data().begin())) ++bad_keep;
    }
  }
  s.check(bad_count == 0, "|select| = max(1, floor(gamma C)) in " + std::to_string(bad_count) + " bad cases");
  s.check(bad_keep == 0, "unselected / zero-block identity violated " + std::to_string(bad_keep) + " times");
  s.check(bad_dense == 0, "refined channels differ from dense " + std::to_string(bad_dense) + " times");
}

void schedule_suite(Suite& s) {
  auto sch = diffusion::NoiseSchedule::from_betas({0.1, 0.2, 0.3}, {1, 1, 1});
  s.check(std::abs(sch.alpha_bar_at(3) - 0.9 * 0.8 * 0.7) < 1e-15, "alpha_bar product");
  s.check(sch.alpha_bar_at(0) == 1.0, "alpha_bar(0) = 1");
  Tensor y({1, 1, 2, 2}, std::vector<double>{0.5, -1.0, 2.0, 0.25});
  diffusion::Denoiser stub = [](const Tensor& v, int) { return add_scalar(mul_scalar(v, 0.5), 0.1); };
  Tensor m3 = diffusion::p_step(y, 3, stub, sch);
  const double c1 = std::sqrt(0.9 * 0.8), c2 = (1.0 - 0.72) / (1.0 - 0.72 * 0.7);
  double worst = 0;
  for (int i = 0; i < 4; ++i) worst = std::max(worst, std::abs(m3.data()[i] - (c1 * (0.5 * y.data()[i] + 0.1) + c2 * y.data()[i])));
  s.check(worst <= 1e-12, "printed reverse mean on 2x2");
  s.check(diffusion::posterior_variance(1, sch) == 0.0, "final-step variance is exactly 0");
  auto pyr = diffusion::make_schedule(8, 1e-4, 0.05, {1, 2});
  s.check(pyr.scale_at(4) == 1 && pyr.scale_at(5) == 2 && pyr.scale_at(8) == 2, "pyramid segments");
  Tensor img = gaussian({1, 3, 8, 8}, 5);
  auto res = diffusion::sample(img, [](const Tensor& v, int) { return v; }, pyr, 3);
  s.check(res.step_shapes.front() == Shape{1, 3, 4, 4} && res.image.shape() == img.shape(), "sampling resolution trace");
}

void oracle_suite(Suite& s) {
  Tensor a = gaussian({3, 8, 8}, 51);
  s.check(std::abs(metrics::psnr(a, add_scalar(a, 0.1)) - 20.0) < 1e-9, "psnr uniform 0.1 -> 20 dB");
  s.check(std::isinf(metrics::psnr(a, a)), "psnr identical -> inf");
  const double x = 0.3, y = 0.7, c1 = 1e-4;
  s.check(std::abs(metrics::ssim(Tensor({1, 12, 12}, x), Tensor({1, 12, 12}, y)) - (2 * x * y + c1) / (x * x + y * y + c1)) < 1e-12,
          "ssim constant pair");
  std::vector<std::vector<double>> v;
  std::vector<int> l;
  for (int cls = 0; cls < 2; ++cls)
    for (auto [dx, dy] : {std::pair{1.0, 0.0}, {-1.0, 0.0}, {0.0, 1.0}, {0.0, -1.0}}) {
      v.push_back({cls * 3.0 + dx, dy});
      l.push_back(cls);
    }
  s.check(std::abs(metrics::wilks_lambda(v, l).lambda - 16.0 / (4.0 * 22.0)) < 1e-12, "wilks two-cluster closed form");
  Profiler prof;
  conv2d(Tensor({1, 1, 8, 8}, 1.0), Tensor({1, 1, 3, 3}, 1.0), Tensor(), 1, 1);
  s.check(flop_count(prof.records()) == 576, "conv 3x3 on 8x8 = 576 MACs");
}

}  // namespace

const std::vector<std::string>& selftest_suites() {
  static const std::vector<std::string> names = {"gradient", "fft", "routing", "schedule", "oracles"};
  return names;
}

std::vector<SuiteResult> run_selftest(const std::vector<std::string>& suites) {
  const auto& all = selftest_suites();
  for (const auto& n : suites) {
    if (std::find(all.begin(), all.end(), n) == all.end()) throw ValueError("unknown selftest suite '" + n + "'");
  }
  std::vector<SuiteResult> out;
  for (const auto& name : all) {
    if (!suites.empty() && std::find(suites.begin(), suites.end(), name) == suites.end()) continue;
    SuiteResult r;
    r.name = name;
    Suite s(r);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (name == "gradient") gradient_suite(s);
      if (name == "fft") fft_suite(s);
      if (name == "routing") routing_suite(s);
      if (name == "schedule") schedule_suite(s);
      if (name == "oracles") oracle_suite(s);
    } catch (const std::exception& e) {
      s.check(false, std::string("exception: ") + e.what());
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace endoir::pipeline
