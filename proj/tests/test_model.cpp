#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include "endoir/model/checkpoint.hpp"
#include "endoir/model/model.hpp"
#include "endoir/tensor/ops.hpp"
#include "test_support.hpp"

using namespace endoir;
using namespace endoir::model;
using endoir::testing::bitwise_equal;
using endoir::testing::randn;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.depth = 2;
  c.base_channels = 8;
  c.steps = 8;
  c.seed = 11;
  return c;
}

Tensor uniform01(Shape s, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(shape_numel(s)));
  for (auto& x : v) x = d(rng);
  return Tensor(std::move(s), std::move(v));
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("endoir_test_model_" + name);
}

}  // namespace

TEST_CASE("shape trace follows the topology arithmetic") {
  ModelConfig c = small_config();
  EndoIRModel m(c);
  const std::int64_t N = 2, H = 16;
  ForwardTrace tr;
  Tensor y = m.denoise(randn({N, 3, H, H}, 1), randn({N, 3, H, H}, 2), 3, &tr);
  CHECK(y.shape() == Shape{N, 3, H, H});

  // Expected trace rebuilt from the config alone.
  std::vector<std::pair<std::string, Shape>> want = {
      {"prompt", {N, c.prompt_width}}, {"task_embedding", {N, c.embed_width}}, {"cond", {N, c.embed_width}}};
  const std::int64_t r0 = H / c.stem_stride;
  want.push_back({"stem_x", {N, c.base_channels, r0, r0}});
  want.push_back({"stem_y", {N, c.base_channels, r0, r0}});
  for (int s = 0; s < c.depth; ++s) {
    const std::int64_t ch = c.base_channels * (1 << s), r = r0 >> s;
    for (const char* part : {".dse_x", ".dse_y", ".fused"}) want.push_back({"enc" + std::to_string(s) + part, {N, ch, r, r}});
  }
  for (int s = c.depth - 1; s >= 0; --s) {
    const std::int64_t ch = c.base_channels * (1 << s), r = r0 >> s;
    want.push_back({"dec" + std::to_string(s) + ".narb_in", {N, ch, r, r}});
    want.push_back({"dec" + std::to_string(s) + ".narb_out", {N, ch, r, r}});
  }
  want.push_back({"head", {N, 3, H, H}});

  REQUIRE(tr.stages.size() == want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    INFO(want[i].first);
    CHECK(tr.stages[i].first == want[i].first);
    CHECK(tr.stages[i].second.shape() == want[i].second);
  }
  for (const auto& per_stage : tr.routing) {
    REQUIRE(per_stage.size() == static_cast<std::size_t>(N));
  }
}

TEST_CASE("pyramid input: reduced-resolution y with full-resolution condition") {
  EndoIRModel m(small_config());
  Tensor y = m.denoise(randn({1, 3, 16, 16}, 1), randn({1, 3, 32, 32}, 2), 5);
  CHECK(y.shape() == Shape{1, 3, 16, 16});
}

TEST_CASE("denoiser shape errors name the stage") {
  EndoIRModel m(small_config());
  CHECK_THROWS_WITH_AS(m.denoise(randn({1, 3, 18, 18}, 1), randn({1, 3, 18, 18}, 2), 1),
                       doctest::Contains("encoder stage 1"), ShapeError);
  CHECK_THROWS_AS(m.denoise(randn({1, 3, 16, 16}, 1), randn({2, 3, 16, 16}, 2), 1), ShapeError);
  CHECK_THROWS_AS(m.denoise(randn({1, 3, 16, 16}, 1), randn({1, 3, 24, 24}, 2), 1), ShapeError);
  CHECK_THROWS_AS(m.denoise(randn({1, 4, 16, 16}, 1), randn({1, 4, 16, 16}, 2), 1), ShapeError);
}

TEST_CASE("all-zero parameters leave only the head bias") {
  EndoIRModel m(small_config());
  for (auto& e : m.params().entries()) {
    Tensor t = e.second;
    std::fill(t.data_mut().begin(), t.data_mut().end(), 0.0);
  }
  Tensor bias = m.params().get("head.bias");
  const double b[3] = {0.25, -0.5, 0.125};
  std::copy(b, b + 3, bias.data_mut().begin());
  Tensor y = m.denoise(randn({2, 3, 16, 16}, 3), randn({2, 3, 16, 16}, 4), 2);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t ch = 0; ch < 3; ++ch)
      for (std::int64_t i = 0; i < 256; ++i) REQUIRE(y.data()[(n * 3 + ch) * 256 + i] == b[ch]);
}

TEST_CASE("gamma changes only routed channels") {
  ModelConfig c = small_config();
  EndoIRModel m(c);
  Tensor yin = randn({2, 3, 16, 16}, 5), x = randn({2, 3, 16, 16}, 6);
  ForwardTrace full, half;
  m.set_gamma(1.0);
  m.denoise(yin, x, 4, &full);
  m.set_gamma(0.5);
  m.denoise(yin, x, 4, &half);

  // The encoder and the first decoder input don't depend on gamma.
  for (std::size_t s = 0; s < full.fused.size(); ++s) CHECK(bitwise_equal(full.fused[s], half.fused[s]));
  REQUIRE(bitwise_equal(full.narb_in[0], half.narb_in[0]));

  for (std::size_t stage = 0; stage < half.narb_out.size(); ++stage) {
    const Tensor& in = half.narb_in[stage];
    const Tensor& out = half.narb_out[stage];
    const auto C = in.size(1), HW = in.size(2) * in.size(3);
    for (std::int64_t n = 0; n < in.size(0); ++n) {
      const auto& sel = half.routing[stage][static_cast<std::size_t>(n)].selected;
      CHECK(static_cast<std::int64_t>(sel.size()) == std::max<std::int64_t>(1, C / 2));
      CHECK(full.routing[stage][static_cast<std::size_t>(n)].selected.size() == static_cast<std::size_t>(C));
      for (std::int64_t ch = 0; ch < C; ++ch) {
        const bool routed = std::find(sel.begin(), sel.end(), ch) != sel.end();
        for (std::int64_t i = 0; i < HW; ++i) {
          const auto at = (n * C + ch) * HW + i;
          if (!routed) {
            REQUIRE(out.data()[at] == in.data()[at]);
          } else if (stage == 0) {
            // Same input as the gamma=1 run, so refined channels agree too.
            REQUIRE(out.data()[at] == full.narb_out[0].data()[at]);
          }
        }
      }
    }
  }
}

TEST_CASE("end-to-end denoiser gradient check, depth 2, 8 channels, 16x16") {
  ModelConfig c = small_config();
  EndoIRModel m(c);
  testing::scramble(m.params(), 21, 0.1);
  Tensor yin = randn({1, 3, 16, 16}, 7), x = randn({1, 3, 16, 16}, 8);
  ForwardTrace tr;
  m.denoise(yin, x, 3, &tr);
  // Top-k must not flip under the probe perturbation.
  for (const auto& stage : tr.routing)
    for (const auto& d : stage) {
      std::vector<double> rel(d.relevance.data().begin(), d.relevance.data().end());
      std::vector<double> sorted = rel;
      std::sort(sorted.rbegin(), sorted.rend());
      const auto k = d.selected.size();
      if (k < sorted.size()) REQUIRE(sorted[k - 1] - sorted[k] > 1e-7);
    }
  std::vector<Tensor> inputs = testing::all_params(m.params());
  inputs.push_back(yin);
  inputs.push_back(x);
  auto r = grad_check(
      "denoiser", [&] { return random_projection(m.denoise(yin, x, 3), 99); }, inputs,
      GradCheckOptions{.eps = 1e-5, .tolerance = 1e-3, .max_coords_per_tensor = 4});
  INFO("rel=" << r.rel_error << " coords=" << r.coords);
  CHECK(r.passed);
}

TEST_CASE("timestep embedding and model-space mapping") {
  Tensor e = timestep_embedding({0, 7}, 4);
  // k=0: freq 1, k=1: freq 10000^(-1/2) = 0.01
  CHECK(e.at({0, 0}) == 0.0);
  CHECK(e.at({0, 2}) == 1.0);
  CHECK(e.at({1, 0}) == doctest::Approx(std::sin(7.0)).epsilon(1e-15));
  CHECK(e.at({1, 1}) == doctest::Approx(std::sin(0.07)).epsilon(1e-12));
  CHECK(e.at({1, 3}) == doctest::Approx(std::cos(0.07)).epsilon(1e-12));
  Tensor img({1, 1, 1, 3}, std::vector<double>{0.0, 0.5, 1.0});
  Tensor y = to_model_space(img);
  CHECK(y.data()[0] == -1.0);
  CHECK(y.data()[1] == 0.0);
  CHECK(y.data()[2] == 1.0);
  CHECK(bitwise_equal(from_model_space(y), img));
  Tensor over({2}, std::vector<double>{-3.0, 3.0});
  CHECK(from_model_space(over).data()[0] == 0.0);
  CHECK(from_model_space(over).data()[1] == 1.0);
}

TEST_CASE("adam matches the closed form for gradients [1, 1]") {
  nn::ParameterSet ps;
  Tensor p = ps.add("p", Tensor({1}, std::vector<double>{1.0}));
  AdamState st = make_adam_state(ps);
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0, want = 1.0;
  for (int step = 1; step <= 2; ++step) {
    ps.clear_grads();
    detail::accumulate_grad(p, std::vector<double>{1.0});
    adam_update(ps, st, lr, b1, b2, eps);
    m = b1 * m + (1 - b1) * 1.0;
    v = b2 * v + (1 - b2) * 1.0;
    want -= lr * (m / (1 - std::pow(b1, step))) / (std::sqrt(v / (1 - std::pow(b2, step))) + eps);
    CHECK(p.data()[0] == doctest::Approx(want).epsilon(1e-15));
    CHECK(st.m[0].data()[0] == doctest::Approx(m).epsilon(1e-15));
    CHECK(st.v[0].data()[0] == doctest::Approx(v).epsilon(1e-15));
  }
  // Each bias-corrected step is lr / (1 + eps).
  CHECK(p.data()[0] == doctest::Approx(1.0 - 2 * lr / (1 + eps)).epsilon(1e-14));
}

TEST_CASE("lr = 0 leaves parameters bitwise unchanged") {
  ModelConfig c = small_config();
  c.lr = 0.0;
  EndoIRModel m(c);
  std::vector<Tensor> before;
  for (const auto& e : m.params().entries()) before.push_back(e.second.clone());
  Trainer tr(m);
  Batch b{uniform01({2, 3, 16, 16}, 1), uniform01({2, 3, 16, 16}, 2)};
  auto s = tr.step(b);
  CHECK(std::isfinite(s.loss));
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(bitwise_equal(before[i], m.params().entries()[i].second));
}

TEST_CASE("training is deterministic per seed") {
  auto run = [] {
    EndoIRModel m(small_config());
    Trainer tr(m);
    Batch b{uniform01({2, 3, 16, 16}, 1), uniform01({2, 3, 16, 16}, 2)};
    std::vector<double> losses;
    for (int i = 0; i < 3; ++i) losses.push_back(tr.step(b).loss);
    return losses;
  };
  CHECK(run() == run());
}

TEST_CASE("overfitting one fixed sample") {
  ModelConfig c = small_config();
  EndoIRModel m(c);
  Trainer tr(m, TrainOptions{.fixed_t = 4, .fixed_noise = 5});
  Batch b{uniform01({1, 3, 16, 16}, 3), uniform01({1, 3, 16, 16}, 4)};
  std::vector<double> loss;
  for (int i = 0; i < 200; ++i) loss.push_back(tr.step(b).loss);
  INFO("first " << loss.front() << " last " << loss.back());
  CHECK(loss.back() <= 0.5 * loss.front());
  double prev = 1e300;
  for (std::size_t i = 9; i < loss.size(); ++i) {
    double avg = 0;
    for (std::size_t j = i - 9; j <= i; ++j) avg += loss[j];
    avg /= 10;
    INFO("moving average ending at step " << i);
    CHECK(avg <= prev);
    prev = avg;
  }
}

TEST_CASE("non-finite loss raises a numeric error with stage statistics") {
  EndoIRModel m(small_config());
  Tensor w = m.params().get("head.weight");
  w.data_mut()[0] = std::numeric_limits<double>::quiet_NaN();
  Trainer tr(m);
  Batch b{uniform01({1, 3, 16, 16}, 1), uniform01({1, 3, 16, 16}, 2)};
  try {
    tr.step(b);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.diagnostics()).find("head") != std::string::npos);
    CHECK(std::string(e.diagnostics()).find("enc0.fused") != std::string::npos);
  }
  CHECK(tr.adam().step == 0);
}

TEST_CASE("restore is deterministic and in range") {
  ModelConfig c = small_config();
  EndoIRModel m(c);
  Tensor img = uniform01({1, 3, 16, 16}, 9);
  Tensor a = m.restore(img, 3), b = m.restore(img, 3);
  CHECK(bitwise_equal(a, b));
  CHECK(a.shape() == img.shape());
  for (double v : a.data()) REQUIRE((v >= 0.0 && v <= 1.0));
}

TEST_CASE("checkpoint roundtrip is bitwise") {
  ModelConfig c = small_config();
  EndoIRModel m(c);
  Trainer tr(m);
  Batch b{uniform01({2, 3, 16, 16}, 1), uniform01({2, 3, 16, 16}, 2)};
  tr.step(b);
  const auto path = temp_file("roundtrip.ckpt");
  save_checkpoint(path.string(), m, &tr.adam());
  Tensor yin = randn({1, 3, 16, 16}, 3), x = randn({1, 3, 16, 16}, 4);
  Tensor before = m.denoise(yin, x, 2);

  auto loaded = model_from_checkpoint(load_checkpoint(path.string()));
  CHECK(bitwise_equal(loaded->denoise(yin, x, 2), before));
  CHECK(loaded->config().fields() == m.config().fields());

  // Saving the loaded model yields the same bytes.
  auto ck = load_checkpoint(path.string());
  CHECK(ck.step == 1);
  CHECK(encode_checkpoint(ck) == encode_checkpoint(capture(m, &tr.adam())));
  std::filesystem::remove(path);
}

TEST_CASE("resume from checkpoint continues the same trajectory") {
  ModelConfig c = small_config();
  Batch b{uniform01({1, 3, 16, 16}, 1), uniform01({1, 3, 16, 16}, 2)};
  EndoIRModel straight(c);
  Trainer t1(straight);
  for (int i = 0; i < 4; ++i) t1.step(b);

  EndoIRModel first(c);
  Trainer t2(first);
  for (int i = 0; i < 2; ++i) t2.step(b);
  auto bytes = encode_checkpoint(capture(first, &t2.adam()));
  EndoIRModel resumed(c);
  Trainer t3(resumed);
  apply_checkpoint(decode_checkpoint(bytes), resumed, &t3.adam());
  for (int i = 0; i < 2; ++i) t3.step(b);
  for (std::size_t i = 0; i < straight.params().size(); ++i) {
    REQUIRE(bitwise_equal(straight.params().entries()[i].second, resumed.params().entries()[i].second));
  }
}

TEST_CASE("checkpoint error kinds") {
  ModelConfig c = small_config();
  EndoIRModel m(c);
  auto bytes = encode_checkpoint(capture(m, nullptr));
  auto kind_of = [](const std::vector<unsigned char>& b) {
    try {
      decode_checkpoint(b);
    } catch (const CheckpointError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  using K = CheckpointError::Kind;
  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<unsigned char> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    INFO("cut at " << cut);
    CHECK(kind_of(t) == static_cast<int>(K::Corrupt));
  }
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  CHECK(kind_of(flipped) == static_cast<int>(K::Corrupt));
  auto versioned = bytes;
  versioned[4] = 2;
  CHECK(kind_of(versioned) == static_cast<int>(K::Version));

  const auto path = temp_file("truncated.ckpt");
  {
    std::ofstream f(path, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), 100);
  }
  try {
    load_checkpoint(path.string());
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == K::Corrupt);
  }
  std::filesystem::remove(path);
  try {
    load_checkpoint("/nonexistent/dir/x.ckpt");
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == K::Io);
  }
}

TEST_CASE("config mismatch names the first differing field") {
  ModelConfig a = small_config();
  EndoIRModel m(a);
  auto ck = decode_checkpoint(encode_checkpoint(capture(m, nullptr)));
  ModelConfig b = a;
  b.n_res = 3;
  b.depth = 3;
  EndoIRModel other(b);
  try {
    apply_checkpoint(ck, other);
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(e.kind() == CheckpointError::Kind::Incompatible);
    CHECK(e.field == "depth");
    CHECK(std::string(e.what()).find("depth") != std::string::npos);
  }
  // Inference knobs are not architecture.
  ModelConfig g = a;
  g.gamma = 0.25;
  g.sampler = "posterior";
  EndoIRModel knob(g);
  CHECK_NOTHROW(apply_checkpoint(ck, knob));
}
