#include "endoir/model/model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "endoir/tensor/ops.hpp"
#include "endoir/tensor/profile.hpp"

namespace endoir::model {

using nn::Conv2d;
using nn::Linear;

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::int64_t stage_channels(const ModelConfig& c, int s) { return static_cast<std::int64_t>(c.base_channels) << s; }

Tensor timestep_embedding(const std::vector<int>& t, std::int64_t width) {
  const auto n = static_cast<std::int64_t>(t.size());
  const std::int64_t half = width / 2;
  Tensor out({n, width});
  auto d = out.data_mut();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      const double arg = static_cast<double>(t[static_cast<std::size_t>(i)]) * freq;
      d[i * width + k] = std::sin(arg);
      d[i * width + half + k] = std::cos(arg);
    }
  return out;
}

Tensor to_model_space(const Tensor& img) { return add_scalar(mul_scalar(img, 2.0), -1.0); }

Tensor from_model_space(const Tensor& y) { return clamp(mul_scalar(add_scalar(y, 1.0), 0.5), 0.0, 1.0); }

EndoIRModel::EndoIRModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  schedule_ = config_.schedule();
  nn::Init init(config_.seed);
  auto& ps = params_;
  const auto dp = config_.prompt_width, de = config_.embed_width;
  dict_ = nn::PromptDictionary(ps, "ddp.dict", config_.prompt_atoms, dp, init);
  stems_ = nn::DdpStems(ps, "ddp", 3, config_.prompt_atoms, init);
  stems_.use_spatial = config_.ddp_spatial;
  stems_.use_frequency = config_.ddp_frequency;
  tae_ = nn::TaskAdaptiveEmbedding(ps, "tae", dp, de, config_.tae_hidden, config_.tae_shared, config_.tae_experts,
                                   config_.tae_active, init);
  time_proj_ = Linear(ps, "cond.time", de, de, init);
  task_proj_ = Linear(ps, "cond.task", de, de, init);
  const auto c0 = stage_channels(config_, 0);
  const int stride = config_.stem_stride;
  stem_x_ = Conv2d(ps, "enc.stem_x", 3, c0, stride + 1, stride, init);
  stem_y_ = Conv2d(ps, "enc.stem_y", 3, c0, stride + 1, stride, init);
  const int depth = config_.depth;
  stages_.resize(static_cast<std::size_t>(depth));
  for (int s = 0; s < depth; ++s) {
    auto& st = stages_[static_cast<std::size_t>(s)];
    const auto c = stage_channels(config_, s);
    const std::string p = "enc" + std::to_string(s);
    st.dse = nn::DseStage(ps, p + ".dse", c, init);
    st.rfb = nn::RectifiedFusion(ps, p + ".rfb", c, init);
    if (s + 1 < depth) {
      st.down_x = Conv2d(ps, p + ".down_x", c, 2 * c, 3, 2, init);
      st.down_y = Conv2d(ps, p + ".down_y", c, 2 * c, 3, 2, init);
    }
  }
  for (int s = depth - 1; s >= 0; --s) {
    auto& st = stages_[static_cast<std::size_t>(s)];
    const auto c = stage_channels(config_, s);
    const auto in = s == depth - 1 ? c : c + stage_channels(config_, s + 1);
    const std::string p = "dec" + std::to_string(s);
    st.dec_conv = Conv2d(ps, p + ".conv", in, c, 3, 1, init);
    st.dec_cond = Linear(ps, p + ".cond", de, c, init);
    st.narb = nn::NoiseAwareRouting(ps, p + ".narb", c, de, config_.n_res, init);
  }
  head_ = Conv2d(ps, "head", c0 + 6, 3, 3, 1, init);
}

void EndoIRModel::set_gamma(double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValueError("gamma must lie in (0,1]");
  config_.gamma = gamma;
}

void EndoIRModel::set_prompt_domains(bool spatial, bool frequency) {
  config_.ddp_spatial = stems_.use_spatial = spatial;
  config_.ddp_frequency = stems_.use_frequency = frequency;
}

Tensor EndoIRModel::denoise(const Tensor& y_in, const Tensor& x_degraded, int t, ForwardTrace* trace) const {
  return denoise(y_in, x_degraded, std::vector<int>(static_cast<std::size_t>(y_in.size(0)), t), trace);
}

Tensor EndoIRModel::denoise(const Tensor& y_in, const Tensor& x_degraded, const std::vector<int>& t,
                            ForwardTrace* trace) const {
  if (y_in.rank() != 4 || y_in.size(1) != 3) throw ShapeError("denoiser input must be [N,3,H,W], got " + shape_str(y_in.shape()));
  if (x_degraded.rank() != 4 || x_degraded.size(0) != y_in.size(0) || x_degraded.size(1) != 3) {
    throw ShapeError("condition " + shape_str(x_degraded.shape()) + " does not pair with " + shape_str(y_in.shape()));
  }
  if (static_cast<std::int64_t>(t.size()) != y_in.size(0)) throw ShapeError("one step index per batch item required");
  const auto h = y_in.size(2), w = y_in.size(3);
  if (x_degraded.size(2) % h != 0 || x_degraded.size(3) % w != 0 || x_degraded.size(2) / h != x_degraded.size(3) / w) {
    throw ShapeError("condition " + shape_str(x_degraded.shape()) + " is not an integer multiple of " +
                     shape_str(y_in.shape()));
  }
  const int depth = config_.depth;
  for (int s = 0; s < depth; ++s) {
    const std::int64_t div = std::int64_t{config_.stem_stride} << s;
    if (h % div != 0 || w % div != 0) {
      throw ShapeError("encoder stage " + std::to_string(s) + ": input " + std::to_string(h) + "x" + std::to_string(w) +
                       " not divisible by " + std::to_string(div));
    }
  }
  auto keep = [&](const std::string& name, const Tensor& v) {
    if (trace) trace->add(name, v);
  };

  Tensor x = area_downsample(x_degraded, static_cast<int>(x_degraded.size(2) / h));

  Tensor cond;
  {
    ProfileScope scope("condition");
    Tensor prompt, e_task;
    {
      ProfileScope s("ddp");
      prompt = nn::ddp_forward(x, dict_, stems_);
    }
    {
      ProfileScope s("tae");
      e_task = nn::tae_forward(prompt, tae_, trace ? &trace->tae : nullptr);
    }
    cond = add(gelu(time_proj_(timestep_embedding(t, config_.embed_width))), task_proj_(e_task));
    keep("prompt", prompt);
    keep("task_embedding", e_task);
    keep("cond", cond);
    if (trace) {
      trace->prompt = prompt;
      trace->task_embedding = e_task;
    }
  }

  std::vector<Tensor> skips;
  {
    ProfileScope scope("encoder");
    Tensor hx = stem_x_(x), hy = stem_y_(y_in);
    keep("stem_x", hx);
    keep("stem_y", hy);
    for (int s = 0; s < depth; ++s) {
      ProfileScope ss("stage" + std::to_string(s));
      const auto& st = stages_[static_cast<std::size_t>(s)];
      auto [fx, fy] = nn::dse_forward(hx, hy, st.dse);
      Tensor fused = nn::rfb_forward(fx, fy, st.rfb);
      keep("enc" + std::to_string(s) + ".dse_x", fx);
      keep("enc" + std::to_string(s) + ".dse_y", fy);
      keep("enc" + std::to_string(s) + ".fused", fused);
      if (trace) trace->fused.push_back(fused);
      skips.push_back(fused);
      if (s + 1 < depth) {
        hx = st.down_x(fx);
        hy = st.down_y(fy);
      }
    }
  }

  Tensor hdec;
  {
    ProfileScope scope("decoder");
    for (int s = depth - 1; s >= 0; --s) {
      ProfileScope ss("stage" + std::to_string(s));
      const auto& st = stages_[static_cast<std::size_t>(s)];
      const auto c = stage_channels(config_, s);
      Tensor in = s == depth - 1 ? skips[static_cast<std::size_t>(s)]
                                 : concat({resize_bilinear(hdec, 2.0), skips[static_cast<std::size_t>(s)]}, 1);
      Tensor z = add(st.dec_conv(in), reshape(st.dec_cond(cond), {y_in.size(0), c, 1, 1}));
      z = gelu(z);
      auto routed = nn::narb_forward(z, cond, config_.gamma, st.narb);
      keep("dec" + std::to_string(s) + ".narb_in", z);
      keep("dec" + std::to_string(s) + ".narb_out", routed.out);
      if (trace) {
        trace->narb_in.push_back(z);
        trace->narb_out.push_back(routed.out);
        trace->routing.push_back(routed.decisions);
      }
      hdec = routed.out;
    }
  }

  ProfileScope scope("head");
  Tensor out = head_(concat({resize_bilinear(hdec, config_.stem_stride), x, y_in}, 1));
  keep("head", out);
  return out;
}

Tensor EndoIRModel::task_embedding(const Tensor& degraded) const {
  Tensor x = to_model_space(degraded);
  return nn::tae_forward(nn::ddp_forward(x, dict_, stems_), tae_);
}

Tensor EndoIRModel::restore(const Tensor& degraded, std::uint64_t seed) const {
  Tensor x = to_model_space(degraded);
  diffusion::SampleOptions opt;
  opt.step.rule = config_.reverse_rule();
  opt.step.clip_lo = -1.0;
  opt.step.clip_hi = 1.0;
  opt.stochastic = config_.stochastic;
  opt.out_lo = -1.0;
  opt.out_hi = 1.0;
  diffusion::Denoiser f = [&](const Tensor& y, int t) { return denoise(y, x, t); };
  auto res = diffusion::sample(x, f, schedule_, seed, opt);
  return from_model_space(res.image);
}

// ---- optimization ------------------------------------------------------------

AdamState make_adam_state(const nn::ParameterSet& ps) {
  AdamState st;
  for (const auto& e : ps.entries()) {
    st.m.push_back(Tensor::zeros(e.second.shape()));
    st.v.push_back(Tensor::zeros(e.second.shape()));
  }
  return st;
}

void adam_update(nn::ParameterSet& ps, AdamState& st, double lr, double beta1, double beta2, double eps) {
  if (st.m.size() != ps.size()) throw std::logic_error("optimizer state does not match parameter set");
  ++st.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Tensor p = ps.entries()[i].second;
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.data_mut();
    auto m = st.m[i].data_mut();
    auto v = st.v[i].data_mut();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      const double mh = m[k] / bc1, vh = v[k] / bc2;
      w[k] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
}

Trainer::Trainer(EndoIRModel& model, TrainOptions options)
    : model_(model), adam_(make_adam_state(model.params())), options_(options) {}

std::string describe_trace(const ForwardTrace& trace) {
  std::ostringstream os;
  os.precision(6);
  os << "stage\tshape\tmin\tmax\tmean\tnonfinite\n";
  for (const auto& [name, t] : trace.stages) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum = 0;
    std::int64_t bad = 0, good = 0;
    for (double v : t.data()) {
      if (!std::isfinite(v)) {
        ++bad;
        continue;
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      sum += v;
      ++good;
    }
    os << name << '\t' << shape_str(t.shape()) << '\t' << lo << '\t' << hi << '\t' << (good ? sum / good : 0.0)
       << '\t' << bad << '\n';
  }
  return os.str();
}

StepStats Trainer::step(const Batch& batch) {
  const auto& cfg = model_.config();
  const auto& sched = model_.schedule();
  if (batch.clean.shape() != batch.degraded.shape()) {
    throw ShapeError("batch clean " + shape_str(batch.clean.shape()) + " vs degraded " +
                     shape_str(batch.degraded.shape()));
  }
  std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(adam_.step)));
  std::uniform_int_distribution<int> pick(1, sched.steps());
  StepStats stats;
  stats.t = pick(rng);
  if (options_.fixed_t > 0) {
    if (options_.fixed_t > sched.steps()) throw ValueError("fixed_t beyond the schedule");
    stats.t = options_.fixed_t;
  }
  Tensor y0 = to_model_space(batch.clean);
  Tensor x = to_model_space(batch.degraded);
  Shape noise_shape = y0.shape();
  const int r = sched.scale_at(stats.t);
  noise_shape[2] = diffusion::resolution_at(noise_shape[2], r);
  noise_shape[3] = diffusion::resolution_at(noise_shape[3], r);
  auto pair = diffusion::training_pair(y0, stats.t, sched, diffusion::gaussian(noise_shape, options_.fixed_noise ? options_.fixed_noise : rng()));

  model_.params().clear_grads();
  double loss_value = 0.0;
  {
    GradTape tape;
    Tensor pred = model_.denoise(pair.input, x, stats.t);
    Tensor loss = mse_loss(pred, pair.target);
    loss_value = loss.item();
    if (!std::isfinite(loss_value)) {
      ForwardTrace trace;
      model_.denoise(pair.input, x, stats.t, &trace);
      throw NumericError("non-finite loss at optimizer step " + std::to_string(adam_.step) + " (t=" +
                             std::to_string(stats.t) + ")",
                         describe_trace(trace));
    }
    tape.backward(loss);
  }
  adam_update(model_.params(), adam_, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  model_.params().clear_grads();
  stats.loss = loss_value;
  return stats;
}

}  // namespace endoir::model
