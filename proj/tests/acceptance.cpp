// Acceptance run: one PASS/FAIL line per criterion.
//   acceptance [--only 1,3,...] [--work DIR] [--keep]
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "endoir/degrade/dataset.hpp"
#include "endoir/diffusion/diffusion.hpp"
#include "endoir/metrics/metrics.hpp"
#include "endoir/model/checkpoint.hpp"
#include "endoir/pipeline/pipeline.hpp"
#include "endoir/pipeline/selftest.hpp"
#include "endoir/tensor/ops.hpp"

using namespace endoir;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void progress(const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); }

std::string suite_detail(const pipeline::SuiteResult& r) {
  std::string d = fmt("%d checks, %.1f s", r.checks, r.seconds);
  for (const auto& f : r.failures) d += "; failed " + f;
  return d;
}

// Desk-scale network shared by the 32x32 runs.
model::ModelConfig desk_config() {
  model::ModelConfig c;
  c.depth = 3;
  c.stem_stride = 4;
  c.lr = 2e-4;
  c.seed = 1;
  return c;
}

double mean_psnr(const model::EndoIRModel& m, const std::vector<degrade::LoadedSample>& test) {
  double acc = 0.0;
  for (const auto& s : test) acc += metrics::psnr(pipeline::restore_one(m, s.degraded, s.name, m.config().seed), s.clean);
  return acc / static_cast<double>(test.size());
}

std::string tree_digest(const fs::path& dir) {
  std::vector<std::string> lines;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) lines.push_back(fs::relative(e.path(), dir).string() + " " + pipeline::file_hash(e.path().string()));
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l + "\n";
  return all;
}

class Run {
 public:
  explicit Run(fs::path work) : work_(std::move(work)) {}

  Outcome c1() {
    const auto r = pipeline::run_selftest({"gradient"}).at(0);
    return {r.passed && r.seconds < 600.0, suite_detail(r) + " (budget 600 s)"};
  }

  Outcome c2() {
    const auto r = pipeline::run_selftest({"routing"}).at(0);
    return {r.passed, "1000 random (C, gamma) cases; " + suite_detail(r)};
  }

  Outcome c3() {
    // Hand-derived on betas (0.1, 0.2, 0.3): abar = 0.9, 0.72, 0.504.
    auto sch = diffusion::NoiseSchedule::from_betas({0.1, 0.2, 0.3}, {1, 1, 1});
    const double ab[4] = {1.0, 0.9, 0.72, 0.504};
    Tensor y({1, 1, 2, 2}, std::vector<double>{0.8, -0.6, 0.1, 1.9});
    Tensor c({1, 1, 2, 2}, std::vector<double>{0.25, -0.5, 0.75, 0.0});
    diffusion::Denoiser stub = [&](const Tensor& v, int) { return add(mul_scalar(v, 0.3), c); };
    double worst = 0.0;
    for (int t = 1; t <= 3; ++t) {
      Tensor mu = diffusion::p_step(y, t, stub, sch);
      for (int i = 0; i < 4; ++i) {
        const double f = 0.3 * y.data()[i] + c.data()[i];
        const double want = std::sqrt(ab[t - 1]) * f + (1.0 - ab[t - 1]) / (1.0 - ab[t]) * y.data()[i];
        worst = std::max(worst, std::abs(mu.data()[i] - want));
      }
    }
    const double var1 = diffusion::posterior_variance(1, sch);
    Tensor noisy = diffusion::p_step(y, 1, stub, sch, {}, Tensor({1, 1, 2, 2}, 3.0));
    Tensor quiet = diffusion::p_step(y, 1, stub, sch);
    const bool same = std::equal(noisy.data().begin(), noisy.data().end(), quiet.data().begin());
    return {worst <= 1e-12 && var1 == 0.0 && same,
            fmt("max |mean - closed form| = %.3g over t=1..3 (tol 1e-12); var(t=1) = %g; noise ignored at t=1: %s", worst,
                var1, same ? "yes" : "no")};
  }

  Outcome c4() {
    const auto dir = dataset32();
    auto train = degrade::load_split(dir.string(), "train");
    auto test = degrade::load_split(dir.string(), "test");
    struct Cfg {
      const char* name;
      bool spatial, freq;
    };
    const Cfg cfgs[] = {{"both", true, true}, {"spatial", true, false}, {"frequency", false, true}, {"none", false, false}};
    std::map<std::string, double> p;
    for (const auto& c : cfgs) {
      auto cfg = desk_config();
      cfg.ddp_spatial = c.spatial;
      cfg.ddp_frequency = c.freq;
      model::EndoIRModel m(cfg);
      const auto t0 = Clock::now();
      pipeline::train_samples(m, nullptr, train, kShortSteps, 8);
      p[c.name] = mean_psnr(m, test);
      progress(fmt("  c4 %s: %.3f dB (%.0f s)", c.name, p[c.name], since(t0)));
    }
    const double tol = 0.1;
    const bool ok = p["both"] >= p["spatial"] - tol && p["both"] >= p["frequency"] - tol &&
                    p["spatial"] >= p["none"] - tol && p["frequency"] >= p["none"] - tol;
    return {ok, fmt("held-out PSNR after %d steps: both=%.3f spatial=%.3f frequency=%.3f none=%.3f dB (tol 0.1)",
                    kShortSteps, p["both"], p["spatial"], p["frequency"], p["none"])};
  }

  Outcome c5() {
    const auto t0 = Clock::now();
    degrade::DatasetOptions opt;
    opt.n_per_kind = 65;
    opt.split_train = 10;
    opt.split_test = 3;
    opt.size = 64;
    opt.seed = 5;
    const auto dir = work_ / "desk64";
    degrade::make_dataset(opt, dir.string());
    auto train = degrade::load_split(dir.string(), "train");
    test64_ = degrade::load_split(dir.string(), "test");
    auto cfg = desk_config();
    model64_ = std::make_unique<model::EndoIRModel>(cfg);
    pipeline::train_samples(*model64_, nullptr, train, 5000, 8, [&](std::int64_t s, double loss, int) {
      if (s % 500 == 0) progress(fmt("  c5 step %lld loss %.5f (%.0f s)", static_cast<long long>(s), loss, since(t0)));
    });
    std::map<degrade::Kind, std::pair<double, double>> acc;  // restored, degraded
    std::map<degrade::Kind, int> n;
    for (const auto& s : test64_) {
      acc[s.kind].first += metrics::psnr(pipeline::restore_one(*model64_, s.degraded, s.name, cfg.seed), s.clean);
      acc[s.kind].second += metrics::psnr(s.degraded, s.clean);
      ++n[s.kind];
    }
    const double secs = since(t0);
    bool ok = train.size() == 150 && test64_.size() == 45 && secs <= 7200.0;
    std::string d = fmt("train=%zu test=%zu;", train.size(), test64_.size());
    for (auto& [k, v] : acc) {
      const double r = v.first / n[k], g = v.second / n[k];
      ok = ok && r - g >= 1.0;
      d += fmt(" %s %.2f -> %.2f dB (%+.2f);", degrade::kind_name(k), g, r, r - g);
    }
    d += fmt(" runtime %.0f s (budget 7200)", secs);
    return {ok, d};
  }

  Outcome c6() {
    if (!model64_) {
      progress("  c6 needs the criterion 5 model; training it");
      c5();
    }
    const auto emb = pipeline::task_embeddings(*model64_, test64_);
    std::vector<int> labels;
    for (const auto& s : test64_) labels.push_back(static_cast<int>(s.kind));
    const auto truth = metrics::wilks_lambda(emb, labels);
    std::mt19937_64 rng(606);
    int below = 0;
    double perm_min = 1.0;
    for (int p = 0; p < 100; ++p) {
      auto shuffled = labels;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      const double lp = metrics::wilks_lambda(emb, shuffled).lambda;
      perm_min = std::min(perm_min, lp);
      if (truth.lambda < lp) ++below;
    }
    return {below >= 95, fmt("lambda(kind)=%.4g%s; smaller than %d/100 permutations (min permuted %.4g); %zu test embeddings",
                             truth.lambda, truth.regularized ? " (ridge)" : "", below, perm_min, emb.size())};
  }

  Outcome c7() {
    pipeline::BenchRun run;
    run.config = desk_config();
    run.gammas = {0.5, 1.0};
    run.data_dir = dataset32().string();
    run.train_steps = kShortSteps;
    run.batch = 8;
    run.timing_repeats = 10;
    const auto rows = pipeline::bench_run(run);
    std::ofstream(work_ / "bench.csv") << pipeline::bench_csv(rows);
    const auto& h = rows[0];
    const auto& f = rows[1];
    const double ratio = static_cast<double>(h.refine_macs) / static_cast<double>(f.refine_macs);
    const bool ok = ratio <= 0.55 && h.refine_seconds < f.refine_seconds && h.psnr_db >= f.psnr_db - 0.3;
    return {ok, fmt("refine MACs %lld vs %lld (ratio %.3f, max 0.55); refine time %.4f vs %.4f s; PSNR %.3f vs %.3f dB "
                    "(tol 0.3) after %d steps",
                    static_cast<long long>(h.refine_macs), static_cast<long long>(f.refine_macs), ratio, h.refine_seconds,
                    f.refine_seconds, h.psnr_db, f.psnr_db, kShortSteps)};
  }

  Outcome c8() {
    const auto base = work_ / "determinism";
    degrade::DatasetOptions opt;
    opt.n_per_kind = 4;
    opt.size = 16;
    opt.seed = 8;
    degrade::make_dataset(opt, (base / "data_a").string());
    degrade::make_dataset(opt, (base / "data_b").string());
    const bool data_ok = tree_digest(base / "data_a") == tree_digest(base / "data_b");

    model::ModelConfig cfg;
    cfg.depth = 2;
    cfg.steps = 8;
    cfg.seed = 8;
    auto train = [&](const std::string& tag) {
      pipeline::TrainRun r;
      r.data_dir = (base / "data_a").string();
      r.out_ckpt = (base / (tag + ".ckpt")).string();
      r.config = cfg;
      r.steps = 10;
      r.batch = 2;
      pipeline::train_run(r);
      return r.out_ckpt;
    };
    const auto ck_a = train("a"), ck_b = train("b");
    const bool csv_ok = pipeline::file_hash(ck_a + ".loss.csv") == pipeline::file_hash(ck_b + ".loss.csv");
    const bool ck_ok = pipeline::file_hash(ck_a) == pipeline::file_hash(ck_b);

    const auto in = (base / "data_a" / "degraded").string();
    pipeline::restore_run(ck_a, in, (base / "out_a").string(), 3);
    pipeline::restore_run(ck_b, in, (base / "out_b").string(), 3);
    const bool restore_ok = tree_digest(base / "out_a") == tree_digest(base / "out_b");

    model::EndoIRModel m(cfg);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> nd(0.0, 0.2);
    for (auto& e : m.params().entries()) {
      Tensor t = e.second;
      for (double& v : t.data_mut()) v = nd(rng);
    }
    const auto path = (base / "roundtrip.ckpt").string();
    model::save_checkpoint(path, m);
    auto loaded = model::model_from_checkpoint(model::load_checkpoint(path));
    Tensor x = model::to_model_space(degrade::load_split((base / "data_a").string(), "test").at(0).degraded);
    x = reshape(x, {1, 3, 16, 16});
    Tensor ya = m.denoise(x, x, 5), yb = loaded->denoise(x, x, 5);
    const bool fwd_ok = std::equal(ya.data().begin(), ya.data().end(), yb.data().begin());
    auto yes = [](bool b) { return b ? "identical" : "DIFFERENT"; };
    return {data_ok && csv_ok && ck_ok && restore_ok && fwd_ok,
            fmt("dataset %s; loss CSV %s; checkpoint %s; restores %s; save-load-forward %s", yes(data_ok), yes(csv_ok),
                yes(ck_ok), yes(restore_ok), yes(fwd_ok))};
  }

 private:
  static constexpr int kShortSteps = 2000;

  fs::path dataset32() {
    const auto dir = work_ / "desk32";
    if (!fs::exists(dir / degrade::kManifestName)) {
      degrade::DatasetOptions opt;
      opt.n_per_kind = 32;
      opt.size = 32;
      opt.seed = 4;
      degrade::make_dataset(opt, dir.string());
    }
    return dir;
  }

  fs::path work_;
  std::unique_ptr<model::EndoIRModel> model64_;
  std::vector<degrade::LoadedSample> test64_;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string only, work;
  bool keep = false;
  app.add_option("--only", only, "comma-separated criterion numbers");
  app.add_option("--work", work, "scratch directory");
  app.add_flag("--keep", keep, "keep the scratch directory");
  CLI11_PARSE(app, argc, argv);

  std::set<int> pick;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) pick.insert(std::stoi(item));
  const fs::path dir = work.empty() ? fs::temp_directory_path() / ("endoir_acceptance_" + std::to_string(::getpid())) : fs::path(work);
  fs::create_directories(dir);

  Run run(dir);
  using Fn = Outcome (Run::*)();
  const std::pair<int, Fn> crits[] = {{1, &Run::c1}, {2, &Run::c2}, {3, &Run::c3}, {4, &Run::c4},
                                      {5, &Run::c5}, {6, &Run::c6}, {7, &Run::c7}, {8, &Run::c8}};
  int failed = 0;
  for (const auto& [n, fn] : crits) {
    if (!pick.empty() && !pick.count(n)) continue;
    progress(fmt("criterion %d ...", n));
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = (run.*fn)();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d: %s  %s  [%.0f s]\n", n, o.pass ? "PASS" : "FAIL", o.detail.c_str(), since(t0));
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  if (!keep && work.empty()) fs::remove_all(dir);
  return failed == 0 ? 0 : 1;
}
