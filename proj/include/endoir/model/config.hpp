#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "endoir/diffusion/diffusion.hpp"

namespace endoir::model {

struct ModelConfig {
  // network
  int base_channels = 8;
  int depth = 3;
  int stem_stride = 2;  // encoder stage 0 runs at 1/stem_stride resolution
  int prompt_atoms = 8;   // M
  int prompt_width = 16;  // d_p
  int embed_width = 16;   // d_e
  int tae_hidden = 32;
  int tae_shared = 1;   // n
  int tae_experts = 4;  // K
  int tae_active = 2;   // k_active
  double gamma = 0.5;
  int n_res = 2;
  bool ddp_spatial = true;
  bool ddp_frequency = true;
  // diffusion
  int steps = 50;
  double beta_start = 1e-4;
  double beta_end = 0.05;
  std::vector<int> pyramid = {1, 2};
  std::string sampler = "ddim";  // printed | posterior | ddim
  bool stochastic = false;
  // optimizer
  double lr = 2e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;

  // Throws ValueError naming the offending field.
  void validate() const;
  diffusion::NoiseSchedule schedule() const;
  diffusion::ReverseRule reverse_rule() const;

  // Ordered (field, value-as-text) list; the checkpoint and the config-file
  // parser both go through it so names stay in sync.
  std::vector<std::pair<std::string, std::string>> fields() const;
  // Sets one field from text; returns false for an unknown key, throws
  // ValueError for an unparsable value.
  bool set(const std::string& key, const std::string& value);
};

// Fields that change the parameter layout or the forward computation and so
// must agree between a checkpoint and the model loading it.
bool is_architecture_field(const std::string& key);

}  // namespace endoir::model
