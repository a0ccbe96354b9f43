#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "endoir/degrade/dataset.hpp"
#include "endoir/degrade/image_io.hpp"
#include "endoir/model/checkpoint.hpp"
#include "endoir/pipeline/pipeline.hpp"
#include "endoir/pipeline/selftest.hpp"
#include "endoir/tensor/gradcheck.hpp"

namespace fs = std::filesystem;
using namespace endoir;

namespace {

enum Exit { kOk = 0, kSelftestFail = 1, kUsage = 2, kIo = 3, kNumeric = 4 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

int to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const int x = std::stoi(v, &pos);
    if (pos == v.size()) return x;
  } catch (const std::exception&) {
  }
  throw UsageError(key + ": expected an integer, got '" + v + "'");
}

// Loads --config, applying model keys to cfg; the rest go through `other`,
// which returns false for keys it doesn't know either.
void load_config(const std::string& path, model::ModelConfig& cfg,
                 const std::function<bool(const std::string&, const std::string&)>& other) {
  if (path.empty()) return;
  for (const auto& [k, v] : pipeline::apply_model_keys(cfg, pipeline::read_key_values(path)))
    if (!other(k, v)) throw UsageError(path + ": unknown key '" + k + "'");
}

// ---- degrade ----
struct DegradeArgs {
  std::string out;
  int n = 4;
  std::int64_t size = 32;
  std::uint64_t seed = 1;
  std::string kinds = "all";
  std::string split = "3:1";
};

int cmd_degrade(const DegradeArgs& a) {
  degrade::DatasetOptions opt;
  if (a.n < 1) throw UsageError("--n must be >= 1, got " + std::to_string(a.n));
  const bool pow2 = a.size > 0 && (a.size & (a.size - 1)) == 0;
  if (!pow2) {
    std::int64_t p = 1;
    while (p < a.size) p <<= 1;
    throw UsageError("--size " + std::to_string(a.size) + " is not a power of two; pad to " + std::to_string(p) +
                     " (or pick " + std::to_string(p) + ")");
  }
  if (a.size < 16) throw UsageError("--size must be >= 16");
  opt.n_per_kind = a.n;
  opt.size = a.size;
  opt.seed = a.seed;
  if (a.kinds != "all") {
    opt.kinds.clear();
    for (const auto& k : split_list(a.kinds)) {
      try {
        opt.kinds.push_back(degrade::parse_kind(k));
      } catch (const ValueError& e) {
        throw UsageError(std::string("--kinds: ") + e.what());
      }
    }
    if (opt.kinds.empty()) throw UsageError("--kinds is empty");
  }
  const auto colon = a.split.find(':');
  if (colon == std::string::npos) throw UsageError("--split expects TRAIN:TEST, got '" + a.split + "'");
  opt.split_train = to_int("--split", a.split.substr(0, colon));
  opt.split_test = to_int("--split", a.split.substr(colon + 1));
  if (opt.split_train < 0 || opt.split_test < 0 || opt.split_train + opt.split_test == 0)
    throw UsageError("--split parts must be >= 0 and not both 0");

  const auto man = degrade::make_dataset(opt, a.out);
  std::printf("manifest %s\n", (fs::path(a.out) / degrade::kManifestName).string().c_str());
  for (auto k : opt.kinds) {
    std::printf("kind=%s train=%zu test=%zu\n", degrade::kind_name(k), man.count("train", k),
                man.count("test", k));
  }
  return kOk;
}

// ---- train ----
struct TrainArgs {
  std::string data, out, config, resume, loss_csv;
  int steps = 200, batch = 8, checkpoint_every = 0;
  double gamma = 0.5;
  std::uint64_t seed = 1;
  bool quiet = false;
  CLI::App* app = nullptr;
};

bool given(CLI::App* app, const char* flag) { return app->count(flag) > 0; }

int cmd_train(TrainArgs& a) {
  pipeline::TrainRun run;
  load_config(a.config, run.config, [&](const std::string& k, const std::string& v) {
    if (k == "steps") a.steps = given(a.app, "--steps") ? a.steps : to_int(k, v);
    else if (k == "batch") a.batch = given(a.app, "--batch") ? a.batch : to_int(k, v);
    else if (k == "checkpoint_every") a.checkpoint_every = given(a.app, "--checkpoint-every") ? a.checkpoint_every : to_int(k, v);
    else return false;
    return true;
  });
  if (given(a.app, "--gamma") || a.config.empty()) run.config.gamma = a.gamma;
  if (given(a.app, "--seed") || a.config.empty()) run.config.seed = a.seed;
  if (a.steps < 1) throw UsageError("--steps must be >= 1");
  if (a.batch < 1) throw UsageError("--batch must be >= 1");
  if (a.checkpoint_every < 0) throw UsageError("--checkpoint-every must be >= 0");
  run.config.validate();
  if (!fs::is_directory(a.data)) throw degrade::IoError("--data " + a.data + " is not a directory");
  run.data_dir = a.data;
  run.out_ckpt = a.out;
  run.resume = a.resume;
  run.loss_csv = a.loss_csv;
  run.steps = a.steps;
  run.batch = a.batch;
  run.checkpoint_every = a.checkpoint_every;
  run.verbose = !a.quiet;
  try {
    const auto sum = pipeline::train_run(run);
    std::printf("trained to step %lld in %.2f s; checkpoint %s\n", static_cast<long long>(sum.final_step), sum.seconds,
                a.out.c_str());
    if (!sum.losses.empty()) std::printf("loss first=%.6f last=%.6f\n", sum.losses.front(), sum.losses.back());
  } catch (const model::NumericError& e) {
    const std::string diag = a.out + ".diag.tsv";
    std::ofstream(diag) << e.diagnostics();
    std::fprintf(stderr, "error: %s\ndiagnostics written to %s\n", e.what(), diag.c_str());
    return kNumeric;
  }
  return kOk;
}

// ---- restore ----
struct RestoreArgs {
  std::string ckpt, in, out;
  std::uint64_t seed = 1;
};

int cmd_restore(const RestoreArgs& a) {
  const auto sum = pipeline::restore_run(a.ckpt, a.in, a.out, a.seed);
  std::printf("restored %zu images in %.3f s (%.3f images/s)\n", sum.images, sum.seconds,
              sum.seconds > 0 ? static_cast<double>(sum.images) / sum.seconds : 0.0);
  return kOk;
}

// ---- eval ----
struct EvalArgs {
  std::string pred, ref, manifest, json;
};

int cmd_eval(const EvalArgs& a) {
  const auto res = pipeline::eval_run(a.pred, a.ref, a.manifest);
  std::fputs(metrics::report_key_value(res.report).c_str(), stdout);
  if (!a.json.empty()) {
    std::ofstream f(a.json);
    f << metrics::report_json(res.report, res.scores);
    if (!f) throw degrade::IoError("cannot write " + a.json);
  }
  return kOk;
}

// ---- selftest ----
struct SelftestArgs {
  std::vector<std::string> suites;
  std::string fault;
  double fault_factor = 0.5;
};

int cmd_selftest(const SelftestArgs& a) {
  if (!a.fault.empty()) {
    detail::set_gradient_fault(a.fault, a.fault_factor);
    std::printf("injecting gradient fault: %s x%g\n", a.fault.c_str(), a.fault_factor);
  }
  double total = 0;
  bool ok = true;
  for (const auto& r : pipeline::run_selftest(a.suites)) {
    std::printf("suite %-9s %s  checks=%d  %.2f s\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.checks, r.seconds);
    for (const auto& f : r.failures) std::printf("  failed: %s\n", f.c_str());
    total += r.seconds;
    ok = ok && r.passed;
  }
  std::printf("selftest %s in %.2f s\n", ok ? "passed" : "FAILED", total);
  return ok ? kOk : kSelftestFail;
}

// ---- bench ----
struct BenchArgs {
  std::string config, gammas = "0.25,0.5,0.75,1.0", data, out;
  int steps = 0, batch = 8, repeats = 10;
  std::int64_t size = 32;
  CLI::App* app = nullptr;
};

int cmd_bench(BenchArgs& a) {
  pipeline::BenchRun run;
  load_config(a.config, run.config, [&](const std::string& k, const std::string& v) {
    if (k == "gammas") a.gammas = given(a.app, "--gammas") ? a.gammas : v;
    else if (k == "data") a.data = given(a.app, "--data") ? a.data : v;
    else if (k == "train_steps") a.steps = given(a.app, "--steps") ? a.steps : to_int(k, v);
    else if (k == "batch") a.batch = given(a.app, "--batch") ? a.batch : to_int(k, v);
    else if (k == "timing_repeats") a.repeats = given(a.app, "--repeats") ? a.repeats : to_int(k, v);
    else return false;
    return true;
  });
  const auto items = split_list(a.gammas);
  if (items.empty()) throw UsageError("--gammas: empty list");
  for (const auto& g : items) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(g, &pos);
      if (pos != g.size()) throw std::invalid_argument(g);
      if (!(v > 0.0 && v <= 1.0)) throw UsageError("--gammas: " + g + " outside (0,1]");
      run.gammas.push_back(v);
    } catch (const std::invalid_argument&) {
      throw UsageError("--gammas: '" + g + "' is not a number");
    }
  }
  if (a.steps < 0 || a.batch < 1 || a.repeats < 1) throw UsageError("--steps/--batch/--repeats out of range");
  run.config.validate();
  run.data_dir = a.data;
  run.train_steps = a.steps;
  run.batch = a.batch;
  run.timing_repeats = a.repeats;
  run.size = a.size;
  const std::string csv = pipeline::bench_csv(pipeline::bench_run(run));
  std::fputs(csv.c_str(), stdout);
  if (!a.out.empty()) {
    std::ofstream f(a.out);
    f << csv;
    if (!f) throw degrade::IoError("cannot write " + a.out);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EndoIR desk-scale restoration"};
  app.require_subcommand(1);

  DegradeArgs da;
  auto* deg = app.add_subcommand("degrade", "generate a synthetic paired dataset");
  deg->add_option("--out", da.out, "output directory")->required();
  deg->add_option("--n", da.n, "samples per kind");
  deg->add_option("--size", da.size, "image side (power of two)");
  deg->add_option("--seed", da.seed);
  deg->add_option("--kinds", da.kinds, "all or a list of lowlight,smoke,blood");
  deg->add_option("--split", da.split, "train:test ratio");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  ta.app = tr;
  tr->add_option("--data", ta.data, "dataset directory")->required();
  tr->add_option("--out", ta.out, "checkpoint path")->required();
  tr->add_option("--steps", ta.steps, "total optimizer steps");
  tr->add_option("--gamma", ta.gamma, "routing ratio");
  tr->add_option("--seed", ta.seed);
  tr->add_option("--config", ta.config, "key=value file (flags override)");
  tr->add_option("--batch", ta.batch);
  tr->add_option("--checkpoint-every", ta.checkpoint_every);
  tr->add_option("--resume", ta.resume, "checkpoint to continue from");
  tr->add_option("--loss-csv", ta.loss_csv, "default <out>.loss.csv");
  tr->add_flag("--quiet", ta.quiet);

  RestoreArgs ra;
  auto* rs = app.add_subcommand("restore", "restore a PNG or a directory of PNGs");
  rs->add_option("--ckpt", ra.ckpt)->required();
  rs->add_option("--in", ra.in)->required();
  rs->add_option("--out", ra.out)->required();
  rs->add_option("--seed", ra.seed);

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "score predictions against references");
  ev->add_option("--pred", ea.pred)->required();
  ev->add_option("--ref", ea.ref)->required();
  ev->add_option("--manifest", ea.manifest, "per-kind breakdown");
  ev->add_option("--json", ea.json, "also write the report as JSON");

  SelftestArgs sa;
  auto* st = app.add_subcommand("selftest", "gradient, fft, routing, schedule and oracle suites");
  st->add_option("--suite", sa.suites, "run only these suites");
  st->add_option("--inject-fault", sa.fault, "scale the backward of this op (negative control)");
  st->add_option("--fault-factor", sa.fault_factor);

  BenchArgs ba;
  auto* be = app.add_subcommand("bench", "gamma sweep: MACs, refinement time, PSNR");
  ba.app = be;
  be->add_option("--config", ba.config);
  be->add_option("--gammas", ba.gammas, "comma-separated list");
  be->add_option("--data", ba.data, "dataset for training and PSNR");
  be->add_option("--steps", ba.steps, "training budget per gamma");
  be->add_option("--batch", ba.batch);
  be->add_option("--repeats", ba.repeats, "timed forwards");
  be->add_option("--size", ba.size, "probe size without data");
  be->add_option("--out", ba.out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*deg) return cmd_degrade(da);
    if (*tr) return cmd_train(ta);
    if (*rs) return cmd_restore(ra);
    if (*ev) return cmd_eval(ea);
    if (*st) return cmd_selftest(sa);
    if (*be) return cmd_bench(ba);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const pipeline::PairingError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const model::CheckpointError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.kind() == model::CheckpointError::Kind::Incompatible ? kUsage : kIo;
  } catch (const degrade::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const model::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumeric;
  } catch (const std::invalid_argument& e) {  // ShapeError, ValueError
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  }
  return kUsage;
}
