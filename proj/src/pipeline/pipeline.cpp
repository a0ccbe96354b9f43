#include "endoir/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "endoir/degrade/image_io.hpp"
#include "endoir/model/checkpoint.hpp"
#include "endoir/tensor/ops.hpp"
#include "endoir/tensor/profile.hpp"

namespace endoir::pipeline {

namespace fs = std::filesystem;
using degrade::IoError;
using degrade::LoadedSample;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Tensor stack(const std::vector<Tensor>& images) {
  std::vector<Tensor> parts;
  for (const auto& im : images) parts.push_back(reshape(im, {1, im.size(0), im.size(1), im.size(2)}));
  return concat(std::span<const Tensor>(parts), 0);
}

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

KeyValues read_key_values(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read config " + path);
  KeyValues kv;
  std::string line;
  int n = 0;
  while (std::getline(f, line)) {
    ++n;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ValueError(path + ":" + std::to_string(n) + ": expected key=value");
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

KeyValues apply_model_keys(model::ModelConfig& cfg, const KeyValues& kv) {
  KeyValues rest;
  for (const auto& [k, v] : kv)
    if (!cfg.set(k, v)) rest.emplace_back(k, v);
  return rest;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path);
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

// ---- training ---------------------------------------------------------------------

TrainSummary train_samples(model::EndoIRModel& m, model::AdamState* resume_state, const std::vector<LoadedSample>& train,
                           int steps, int batch, const std::function<void(std::int64_t, double, int)>& on_step,
                           const std::function<void(const model::Trainer&)>& on_checkpoint, int checkpoint_every) {
  if (train.empty()) throw ValueError("training set is empty");
  if (batch < 1) throw ValueError("batch must be >= 1");
  model::Trainer trainer(m);
  if (resume_state) trainer.adam() = *resume_state;
  TrainSummary sum;
  const auto t0 = std::chrono::steady_clock::now();
  const std::int64_t first = trainer.adam().step;
  for (std::int64_t s = first; s < steps; ++s) {
    std::mt19937_64 rng(model::mix_seed(m.config().seed ^ 0x5eedba7c4ull, static_cast<std::uint64_t>(s)));
    std::vector<Tensor> clean, deg;
    for (int b = 0; b < batch; ++b) {
      const auto& smp = train[static_cast<std::size_t>(rng() % train.size())];
      clean.push_back(smp.clean);
      deg.push_back(smp.degraded);
    }
    const auto st = trainer.step({stack(clean), stack(deg)});
    sum.losses.push_back(st.loss);
    if (on_step) on_step(s + 1, st.loss, st.t);
    if (on_checkpoint && checkpoint_every > 0 && (s + 1) % checkpoint_every == 0) on_checkpoint(trainer);
  }
  sum.final_step = trainer.adam().step;
  sum.seconds = seconds_since(t0);
  if (on_checkpoint) on_checkpoint(trainer);
  if (resume_state) *resume_state = trainer.adam();
  return sum;
}

TrainSummary train_run(const TrainRun& run) {
  auto train = degrade::load_split(run.data_dir, "train");
  if (train.empty()) throw ValueError("no train split in " + run.data_dir);
  std::unique_ptr<model::EndoIRModel> m;
  model::AdamState adam;
  if (!run.resume.empty()) {
    auto ck = model::load_checkpoint(run.resume);
    model::check_compatible(ck.config, run.config);
    m = std::make_unique<model::EndoIRModel>(run.config);
    model::apply_checkpoint(ck, *m, &adam);
  } else {
    m = std::make_unique<model::EndoIRModel>(run.config);
    adam = model::make_adam_state(m->params());
  }
  const std::string csv_path = run.loss_csv.empty() ? run.out_ckpt + ".loss.csv" : run.loss_csv;
  std::ofstream csv(csv_path, adam.step > 0 ? std::ios::app : std::ios::trunc);
  if (!csv) throw IoError("cannot write " + csv_path);
  if (adam.step == 0) csv << "step,loss,lr\n";
  char buf[96];
  const double lr = run.config.lr;
  auto on_step = [&](std::int64_t step, double loss, int t) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g\n", static_cast<long long>(step), loss, lr);
    csv << buf;
    if (run.verbose && (step % 50 == 0 || step == 1)) std::printf("step %lld t=%d loss %.6f\n", static_cast<long long>(step), t, loss);
  };
  auto on_ckpt = [&](const model::Trainer& tr) {
    csv.flush();
    model::save_checkpoint(run.out_ckpt, *m, &tr.adam());
  };
  auto sum = train_samples(*m, &adam, train, run.steps, run.batch, on_step, on_ckpt, run.checkpoint_every);
  if (!csv) throw IoError("write failed for " + csv_path);
  return sum;
}

// ---- restoration / evaluation -------------------------------------------------------------

std::int64_t padded_extent(std::int64_t v, std::int64_t floor) {
  std::int64_t p = 1;
  while (p < std::max(v, floor)) p <<= 1;
  return p;
}

Tensor restore_one(const model::EndoIRModel& m, const Tensor& degraded, const std::string& name, std::uint64_t seed) {
  const auto h = degraded.size(1), w = degraded.size(2);
  const auto& cfg = m.config();
  const std::int64_t floor = static_cast<std::int64_t>(cfg.stem_stride) << cfg.depth;
  const auto ph = padded_extent(h, floor), pw = padded_extent(w, floor);
  // Edge-replicate up to powers of two, restore, crop back.
  Tensor x({1, 3, ph, pw});
  {
    auto src = degraded.data();
    auto dst = x.data_mut();
    for (std::int64_t c = 0; c < 3; ++c)
      for (std::int64_t i = 0; i < ph; ++i)
        for (std::int64_t j = 0; j < pw; ++j)
          dst[static_cast<std::size_t>((c * ph + i) * pw + j)] =
              src[static_cast<std::size_t>((c * h + std::min(i, h - 1)) * w + std::min(j, w - 1))];
  }
  Tensor y = m.restore(x, model::mix_seed(seed, fnv1a64(name)));
  if (ph != h || pw != w) y = narrow(narrow(y, 2, 0, h), 3, 0, w);
  return reshape(y, degraded.shape());
}

RestoreSummary restore_run(const std::string& ckpt, const std::string& in_path, const std::string& out_dir,
                           std::uint64_t seed) {
  auto m = model::model_from_checkpoint(model::load_checkpoint(ckpt));
  std::vector<fs::path> inputs;
  if (fs::is_directory(in_path)) {
    inputs = png_files(in_path);
  } else if (fs::is_regular_file(in_path)) {
    inputs.push_back(in_path);
  } else {
    throw IoError("input " + in_path + " does not exist");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (!fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir);
  RestoreSummary sum;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& p : inputs) {
    Tensor img = degrade::read_png(p.string());
    Tensor out = restore_one(*m, img, p.filename().string(), seed);
    const auto dst = fs::path(out_dir) / p.filename();
    degrade::write_png(dst.string(), out);
    sum.written.push_back(dst.string());
  }
  sum.images = inputs.size();
  sum.seconds = seconds_since(t0);
  return sum;
}

metrics::ImageScore score_pair(const std::string& name, const std::string& kind, const Tensor& pred, const Tensor& ref) {
  return {name, kind, metrics::psnr(pred, ref), metrics::ssim(pred, ref)};
}

EvalResult eval_run(const std::string& pred_dir, const std::string& ref_dir, const std::string& manifest) {
  if (!fs::is_directory(pred_dir)) throw IoError("prediction directory " + pred_dir + " not found");
  if (!fs::is_directory(ref_dir)) throw IoError("reference directory " + ref_dir + " not found");
  std::map<std::string, degrade::Kind> kinds;
  if (!manifest.empty()) {
    for (const auto& e : degrade::read_manifest(manifest).entries) {
      kinds[fs::path(e.degraded_path).filename().string()] = e.kind;
      kinds[fs::path(e.clean_path).filename().string()] = e.kind;
    }
  }
  std::set<std::string> pred, ref;
  for (const auto& p : png_files(pred_dir)) pred.insert(p.filename().string());
  for (const auto& p : png_files(ref_dir)) ref.insert(p.filename().string());
  std::string orphans;
  for (const auto& n : pred)
    if (!ref.count(n)) orphans += " " + pred_dir + "/" + n;
  for (const auto& n : ref)
    if (!pred.count(n)) orphans += " " + ref_dir + "/" + n;
  if (!orphans.empty()) throw PairingError("unpaired files:" + orphans);
  if (pred.empty()) throw PairingError("no PNG files to compare in " + pred_dir);
  EvalResult res;
  for (const auto& n : pred) {
    std::string kind;
    if (!manifest.empty()) {
      auto it = kinds.find(n);
      if (it == kinds.end()) throw PairingError("file " + n + " is not in the manifest");
      kind = degrade::kind_name(it->second);
    }
    res.scores.push_back(score_pair(n, kind, degrade::read_png((fs::path(pred_dir) / n).string()),
                                    degrade::read_png((fs::path(ref_dir) / n).string())));
  }
  res.report = metrics::build_report(res.scores);
  return res;
}

// ---- gamma sweep ------------------------------------------------------------------------------

std::vector<BenchRow> bench_run(const BenchRun& run) {
  if (run.gammas.empty()) throw ValueError("empty gamma list");
  std::vector<LoadedSample> train, test;
  if (!run.data_dir.empty()) {
    train = degrade::load_split(run.data_dir, "train");
    test = degrade::load_split(run.data_dir, "test");
  } else if (run.train_steps > 0) {
    throw ValueError("a training budget needs --data");
  }
  std::vector<BenchRow> rows;
  for (double gamma : run.gammas) {
    model::ModelConfig cfg = run.config;
    cfg.gamma = gamma;
    cfg.validate();
    model::EndoIRModel m(cfg);
    BenchRow row;
    row.gamma = gamma;
    row.psnr_db = std::nan("");
    if (run.train_steps > 0) train_samples(m, nullptr, train, run.train_steps, run.batch);

    // Timing input: test images when available, otherwise a seeded frame.
    Tensor probe;
    if (!test.empty()) {
      std::vector<Tensor> xs;
      for (std::size_t i = 0; i < std::min<std::size_t>(test.size(), 8); ++i) xs.push_back(test[i].degraded);
      probe = stack(xs);
    } else {
      probe = stack({degrade::gen_clean(cfg.seed, run.size, run.size)});
    }
    Tensor x = model::to_model_space(probe);
    {
      Profiler prof;
      m.denoise(x, x, 1);
      row.refine_macs = flop_count(prof.records(), "refine");
      row.total_macs = flop_count(prof.records());
    }
    {
      Profiler prof;
      for (int r = 0; r < run.timing_repeats; ++r) m.denoise(x, x, 1);
      for (const auto& [region, secs] : prof.region_seconds()) {
        if (region.size() >= 6 && region.compare(region.size() - 6, 6, "refine") == 0) row.refine_seconds += secs;
      }
    }
    if (run.train_steps > 0 && !test.empty()) {
      double acc = 0;
      for (const auto& s : test) acc += metrics::psnr(restore_one(m, s.degraded, s.name, cfg.seed), s.clean);
      row.psnr_db = acc / static_cast<double>(test.size());
    }
    if (run.verbose) {
      std::printf("gamma=%g refine_macs=%lld refine_s=%.4f psnr=%.3f\n", gamma, static_cast<long long>(row.refine_macs),
                  row.refine_seconds, row.psnr_db);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "gamma,refine_macs,total_macs,refine_seconds,psnr_db\n";
  char buf[160];
  for (const auto& r : rows) {
    char psnr[32] = "";
    if (!std::isnan(r.psnr_db)) std::snprintf(psnr, sizeof psnr, "%.6f", r.psnr_db);
    std::snprintf(buf, sizeof buf, "%g,%lld,%lld,%.6f,%s\n", r.gamma, static_cast<long long>(r.refine_macs),
                  static_cast<long long>(r.total_macs), r.refine_seconds, psnr);
    os << buf;
  }
  return os.str();
}

std::vector<std::vector<double>> task_embeddings(const model::EndoIRModel& m, const std::vector<LoadedSample>& samples) {
  std::vector<std::vector<double>> out;
  for (const auto& s : samples) {
    Tensor e = m.task_embedding(reshape(s.degraded, {1, 3, s.degraded.size(1), s.degraded.size(2)}));
    out.emplace_back(e.data().begin(), e.data().end());
  }
  return out;
}

}  // namespace endoir::pipeline
