#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "endoir/nn/layers.hpp"
#include "endoir/tensor/ops.hpp"

namespace endoir::nn {

// ---- Dual-domain prompter ---------------------------------------------------

struct PromptDictionary {
  Tensor atoms;  // [M, d_p]

  PromptDictionary() = default;
  PromptDictionary(ParameterSet& ps, const std::string& name, std::int64_t atoms_m, std::int64_t width, Init& init);
  std::int64_t count() const { return atoms.size(0); }
  std::int64_t width() const { return atoms.size(1); }
};

// Two 3x3 stems producing M atom logits per site: one on the image, one on
// log(1 + |FFT(image)|). Either can be switched off for the ablation; the
// parameters exist regardless so every configuration starts from the same
// initialization.
struct DdpStems {
  Conv2d spatial, frequency;
  bool use_spatial = true;
  bool use_frequency = true;

  DdpStems() = default;
  DdpStems(ParameterSet& ps, const std::string& name, std::int64_t in_channels, std::int64_t atoms_m, Init& init);
};

struct DdpTrace {
  Tensor site_weights;  // [N, M, H, W], softmax over M
};

// log(1 + |FFT(x)|) computed per channel; differentiable.
Tensor log_magnitude_spectrum(const Tensor& x);

// Returns the prompt [N, d_p].
Tensor ddp_forward(const Tensor& x, const PromptDictionary& dict, const DdpStems& stems, DdpTrace* trace = nullptr);

// ---- Task adaptive embedding -----------------------------------------------

struct TaskAdaptiveEmbedding {
  std::vector<Mlp> shared;
  std::vector<Mlp> experts;
  Linear gate;  // d_p -> K
  int k_active = 2;

  TaskAdaptiveEmbedding() = default;
  TaskAdaptiveEmbedding(ParameterSet& ps, const std::string& name, std::int64_t prompt_width, std::int64_t out_width,
                        std::int64_t hidden, int n_shared, int n_experts, int k_active, Init& init);
};

struct TaeTrace {
  Tensor gate_probs;    // [N, K] full softmax
  Tensor gate_weights;  // [N, K] masked to the active experts, not renormalized
  std::vector<IndexList> active;
};

// Returns E_task [N, d_e].
Tensor tae_forward(const Tensor& prompt, const TaskAdaptiveEmbedding& tae, TaeTrace* trace = nullptr);

// ---- Dual-stream encoder stage ---------------------------------------------

struct StreamEmbed {
  Conv2d conv_in;
  ChannelNorm norm;
  Conv2d conv_out;

  StreamEmbed() = default;
  StreamEmbed(ParameterSet& ps, const std::string& name, std::int64_t channels, Init& init);
  Tensor operator()(const Tensor& x) const;
};

struct DseStage {
  StreamEmbed embed_x, embed_y;
  FeedForward ffn_x, ffn_y;

  DseStage() = default;
  DseStage(ParameterSet& ps, const std::string& name, std::int64_t channels, Init& init);
};

// Single-head attention over the H*W positions of z [N,C,H,W] with z as
// query, key and value: out[:,i] = sum_j softmax_j(z_i . z_j / sqrt(C)) z_j.
Tensor spatial_self_attention(const Tensor& z);

std::pair<Tensor, Tensor> dse_forward(const Tensor& x_feat, const Tensor& y_feat, const DseStage& stage);

// ---- Rectified fusion -------------------------------------------------------

struct RectifiedFusion {
  ChannelNorm norm_x, norm_y;
  Conv2d qk;   // 1x1, C -> 2C
  Conv2d v;    // 1x1, C -> C
  Conv2d out;  // 1x1, C -> C
  FeedForward ffn;
  Tensor w1, w2;  // [1] each; start at 1 and 0

  RectifiedFusion() = default;
  RectifiedFusion(ParameterSet& ps, const std::string& name, std::int64_t channels, Init& init);
};

// Attn = [w1 softmax(S) + w2 gelu(S)] applied to V, S = Q^T K / sqrt(C).
Tensor modulated_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& w1, const Tensor& w2);

Tensor rfb_forward(const Tensor& fx, const Tensor& fy, const RectifiedFusion& rfb);

// ---- Noise-aware routing ----------------------------------------------------

// z + dw3x3(gelu(dw3x3(z))) with one filter per channel; kernels [C,1,3,3].
struct ChannelResBlock {
  Tensor w1, b1, w2, b2;
};

struct NoiseAwareRouting {
  Linear cond_proj;  // noise/task embedding -> C
  Linear lin1, lin2;
  std::vector<ChannelResBlock> res;

  NoiseAwareRouting() = default;
  NoiseAwareRouting(ParameterSet& ps, const std::string& name, std::int64_t channels, std::int64_t cond_width,
                    int n_res, Init& init);
  std::int64_t channels() const { return lin1.weight.size(0); }
};

struct RoutingDecision {
  Tensor relevance;  // [C]
  IndexList selected;
  double gamma = 1.0;
};

struct NarbOutput {
  Tensor out;
  std::vector<RoutingDecision> decisions;  // one per batch item
};

std::int64_t routed_channel_count(std::int64_t channels, double gamma);

// Refines only channels `idx` of a single-sample map [1,C,H,W]; returns the
// refined [1,|idx|,H,W] slice.
Tensor refine_channels(const Tensor& selected, const IndexList& idx, const NoiseAwareRouting& narb);
// Refinement applied to every channel with the full filter banks.
Tensor dense_refine(const Tensor& x, const NoiseAwareRouting& narb);

NarbOutput narb_forward(const Tensor& f_in, const Tensor& cond, double gamma, const NoiseAwareRouting& narb);

}  // namespace endoir::nn
