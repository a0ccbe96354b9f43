#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "endoir/degrade/dataset.hpp"
#include "endoir/metrics/metrics.hpp"
#include "endoir/model/model.hpp"

namespace endoir::pipeline {

// Flat key=value text, '#' comments, blank lines ignored.
using KeyValues = std::vector<std::pair<std::string, std::string>>;
KeyValues read_key_values(const std::string& path);
// Applies the model keys; returns the keys ModelConfig doesn't know.
KeyValues apply_model_keys(model::ModelConfig& cfg, const KeyValues& kv);

std::uint64_t fnv1a64(const std::string& bytes);
std::string file_hash(const std::string& path);  // 16 hex digits

// ---- training ----------------------------------------------------------------

struct TrainRun {
  std::string data_dir;
  std::string out_ckpt;
  std::string loss_csv;  // default: <out_ckpt>.loss.csv
  std::string resume;    // optional checkpoint to continue from
  model::ModelConfig config;
  int steps = 200;
  int batch = 8;
  int checkpoint_every = 0;  // 0: only at the end
  bool verbose = false;
};

struct TrainSummary {
  std::vector<double> losses;  // one per step run in this invocation
  double seconds = 0.0;
  std::int64_t final_step = 0;
};

// Batch items for step s are drawn with replacement from the train split
// using mix_seed(seed, s); the loss CSV has header step,loss,lr.
TrainSummary train_run(const TrainRun& run);

// Same loop on in-memory samples; used by train_run and the bench sweep.
TrainSummary train_samples(model::EndoIRModel& m, model::AdamState* resume_state,
                           const std::vector<degrade::LoadedSample>& train, int steps, int batch,
                           const std::function<void(std::int64_t step, double loss, int t)>& on_step = {},
                           const std::function<void(const model::Trainer&)>& on_checkpoint = {},
                           int checkpoint_every = 0);

// ---- restoration / evaluation ------------------------------------------------------

// Each image is restored alone with seed mix_seed(seed, fnv1a64(name)), so
// results don't depend on directory order or batch composition. Sizes that
// are not powers of two are edge-padded for the transforms and cropped back.
Tensor restore_one(const model::EndoIRModel& m, const Tensor& degraded, const std::string& name, std::uint64_t seed);

struct RestoreSummary {
  std::size_t images = 0;
  double seconds = 0.0;
  std::vector<std::string> written;
};
// in_path is a PNG or a directory of PNGs; outputs keep their filenames.
RestoreSummary restore_run(const std::string& ckpt, const std::string& in_path, const std::string& out_dir,
                           std::uint64_t seed);

struct EvalResult {
  metrics::MetricReport report;
  std::vector<metrics::ImageScore> scores;
};
// Pairs files by name. Throws PairingError listing orphans on either side.
EvalResult eval_run(const std::string& pred_dir, const std::string& ref_dir, const std::string& manifest = "");

class PairingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

metrics::ImageScore score_pair(const std::string& name, const std::string& kind, const Tensor& pred, const Tensor& ref);

// ---- gamma sweep --------------------------------------------------------------------

struct BenchRow {
  double gamma = 0.0;
  std::int64_t refine_macs = 0;
  std::int64_t total_macs = 0;
  double refine_seconds = 0.0;
  double psnr_db = 0.0;  // NaN when no training budget was given
};

struct BenchRun {
  model::ModelConfig config;
  std::vector<double> gammas;
  std::string data_dir;      // required when train_steps > 0
  int train_steps = 0;
  int batch = 8;
  int timing_repeats = 10;
  std::int64_t size = 32;    // forward resolution used when no data is given
  bool verbose = false;
};

// For every gamma: a fresh model from the same seed, trained for the fixed
// budget, then MACs and refinement wall time of full-resolution forwards, and
// mean test-split PSNR of restorations.
std::vector<BenchRow> bench_run(const BenchRun& run);
std::string bench_csv(const std::vector<BenchRow>& rows);  // header gamma,refine_macs,total_macs,refine_seconds,psnr_db

// E_task of each sample's degraded image, as rows.
std::vector<std::vector<double>> task_embeddings(const model::EndoIRModel& m,
                                                 const std::vector<degrade::LoadedSample>& samples);

}  // namespace endoir::pipeline
