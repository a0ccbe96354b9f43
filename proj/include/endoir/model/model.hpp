#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "endoir/diffusion/diffusion.hpp"
#include "endoir/model/config.hpp"
#include "endoir/nn/blocks.hpp"

namespace endoir::model {

class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::string diagnostics)
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const { return diagnostics_; }

 private:
  std::string diagnostics_;
};

// Intermediate activations of one denoiser call, in execution order.
struct ForwardTrace {
  std::vector<std::pair<std::string, Tensor>> stages;
  std::vector<Tensor> fused;     // per encoder stage
  std::vector<Tensor> narb_in;   // per decoder stage, deepest first
  std::vector<Tensor> narb_out;
  std::vector<std::vector<nn::RoutingDecision>> routing;
  Tensor prompt, task_embedding;
  nn::TaeTrace tae;

  void add(const std::string& name, const Tensor& t) { stages.emplace_back(name, t); }
};

// Sinusoidal embedding of integer steps, [N, width].
Tensor timestep_embedding(const std::vector<int>& t, std::int64_t width);

// Maps [0,1] images to the [-1,1] model space and back (clamped).
Tensor to_model_space(const Tensor& img);
Tensor from_model_space(const Tensor& y);

class EndoIRModel {
 public:
  explicit EndoIRModel(const ModelConfig& config);
  EndoIRModel(const EndoIRModel&) = delete;
  EndoIRModel& operator=(const EndoIRModel&) = delete;

  const ModelConfig& config() const { return config_; }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  const diffusion::NoiseSchedule& schedule() const { return schedule_; }

  // Inference-time knobs that don't touch the parameter layout.
  void set_gamma(double gamma);
  void set_prompt_domains(bool spatial, bool frequency);

  // f_theta. y_in: [N,3,h,w] in model space at the resolution of step t-1;
  // x_degraded: [N,3,H,W] model-space condition at base resolution (area-
  // downsampled to h internally). Returns the clean estimate, shape of y_in.
  Tensor denoise(const Tensor& y_in, const Tensor& x_degraded, int t, ForwardTrace* trace = nullptr) const;
  // Same with one step per batch item.
  Tensor denoise(const Tensor& y_in, const Tensor& x_degraded, const std::vector<int>& t,
                 ForwardTrace* trace = nullptr) const;

  // E_task for degraded images ([0,1] space, base resolution).
  Tensor task_embedding(const Tensor& degraded) const;

  // Full pyramid sampling; [0,1] in, [0,1] out.
  Tensor restore(const Tensor& degraded, std::uint64_t seed) const;

 private:
  struct Stage {
    nn::DseStage dse;
    nn::RectifiedFusion rfb;
    nn::Conv2d down_x, down_y;  // to the next stage (unused on the last)
    nn::Conv2d dec_conv;
    nn::Linear dec_cond;
    nn::NoiseAwareRouting narb;
  };

  ModelConfig config_;
  diffusion::NoiseSchedule schedule_;
  nn::ParameterSet params_;
  nn::PromptDictionary dict_;
  nn::DdpStems stems_;
  nn::TaskAdaptiveEmbedding tae_;
  nn::Linear time_proj_, task_proj_;
  nn::Conv2d stem_x_, stem_y_;
  std::vector<Stage> stages_;
  nn::Conv2d head_;
};

std::int64_t stage_channels(const ModelConfig& c, int s);

// ---- optimization ------------------------------------------------------------

struct AdamState {
  std::vector<Tensor> m, v;  // aligned with ParameterSet order
  std::int64_t step = 0;
};

AdamState make_adam_state(const nn::ParameterSet& ps);
// One bias-corrected Adam update from the grads currently held by ps.
void adam_update(nn::ParameterSet& ps, AdamState& st, double lr, double beta1, double beta2, double eps);

struct Batch {
  Tensor clean;     // [B,3,H,W] in [0,1]
  Tensor degraded;  // [B,3,H,W] in [0,1]
};

struct StepStats {
  double loss = 0.0;
  int t = 0;
};

// Pins parts of the per-step draw; the defaults give the standard objective.
struct TrainOptions {
  int fixed_t = 0;                 // > 0: always train on this step
  std::uint64_t fixed_noise = 0;   // != 0: reuse this noise seed every step
};

class Trainer {
 public:
  explicit Trainer(EndoIRModel& model, TrainOptions options = {});

  // Draws t and the noise from the (seed, step) stream, runs
  // forward/backward and one Adam update. Throws NumericError on a
  // non-finite loss, leaving parameters untouched.
  StepStats step(const Batch& batch);

  EndoIRModel& model() { return model_; }
  AdamState& adam() { return adam_; }
  const AdamState& adam() const { return adam_; }

 private:
  EndoIRModel& model_;
  AdamState adam_;
  TrainOptions options_;
};

// Per-stage min/max/mean/non-finite summary of a trace, one line per stage.
std::string describe_trace(const ForwardTrace& trace);

// Seed mixer used for every derived random stream.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace endoir::model
