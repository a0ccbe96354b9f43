#include "endoir/model/config.hpp"

#include <charconv>
#include <sstream>

#include "endoir/tensor/tensor.hpp"

namespace endoir::model {

namespace {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* b = text.data();
  const char* e = b + text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ValueError("bad value '" + text + "' for " + key);
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "on") return true;
  if (text == "0" || text == "false" || text == "off") return false;
  throw ValueError("bad boolean '" + text + "' for " + key);
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ValueError(m); };
  if (depth < 2) fail("depth must be >= 2, got " + std::to_string(depth));
  if (stem_stride != 2 && stem_stride != 4) fail("stem_stride must be 2 or 4");
  if (base_channels < 4 || base_channels % 4 != 0) fail("base_channels must be a positive multiple of 4");
  if (prompt_atoms < 2) fail("prompt_atoms must be >= 2");
  if (prompt_width < 1 || embed_width < 2 || embed_width % 2 != 0) fail("embed_width must be even and >= 2");
  if (tae_hidden < 1 || tae_shared < 0 || tae_experts < 1) fail("invalid task-embedding sizes");
  if (tae_active < 1 || tae_active > tae_experts) fail("tae_active must lie in [1, tae_experts]");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must lie in (0,1], got " + fmt(gamma));
  if (n_res < 1) fail("n_res must be >= 1");
  if (!(lr >= 0.0)) fail("lr must be >= 0");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam betas must lie in [0,1)");
  if (!(adam_eps > 0)) fail("adam_eps must be > 0");
  reverse_rule();
  schedule();
}

diffusion::NoiseSchedule ModelConfig::schedule() const {
  return diffusion::make_schedule(steps, beta_start, beta_end, pyramid);
}

diffusion::ReverseRule ModelConfig::reverse_rule() const {
  if (sampler == "printed") return diffusion::ReverseRule::PrintedMean;
  if (sampler == "posterior") return diffusion::ReverseRule::Posterior;
  if (sampler == "ddim") return diffusion::ReverseRule::Ddim;
  throw ValueError("sampler must be printed, posterior or ddim; got " + sampler);
}

std::vector<std::pair<std::string, std::string>> ModelConfig::fields() const {
  return {
      {"base_channels", std::to_string(base_channels)},
      {"depth", std::to_string(depth)},
      {"stem_stride", std::to_string(stem_stride)},
      {"prompt_atoms", std::to_string(prompt_atoms)},
      {"prompt_width", std::to_string(prompt_width)},
      {"embed_width", std::to_string(embed_width)},
      {"tae_hidden", std::to_string(tae_hidden)},
      {"tae_shared", std::to_string(tae_shared)},
      {"tae_experts", std::to_string(tae_experts)},
      {"tae_active", std::to_string(tae_active)},
      {"gamma", fmt(gamma)},
      {"n_res", std::to_string(n_res)},
      {"ddp_spatial", ddp_spatial ? "1" : "0"},
      {"ddp_frequency", ddp_frequency ? "1" : "0"},
      {"steps", std::to_string(steps)},
      {"beta_start", fmt(beta_start)},
      {"beta_end", fmt(beta_end)},
      {"pyramid", join(pyramid)},
      {"sampler", sampler},
      {"stochastic", stochastic ? "1" : "0"},
      {"lr", fmt(lr)},
      {"adam_beta1", fmt(adam_beta1)},
      {"adam_beta2", fmt(adam_beta2)},
      {"adam_eps", fmt(adam_eps)},
      {"seed", std::to_string(seed)},
  };
}

bool ModelConfig::set(const std::string& key, const std::string& v) {
  if (key == "base_channels") base_channels = parse_number<int>(key, v);
  else if (key == "depth") depth = parse_number<int>(key, v);
  else if (key == "stem_stride") stem_stride = parse_number<int>(key, v);
  else if (key == "prompt_atoms") prompt_atoms = parse_number<int>(key, v);
  else if (key == "prompt_width") prompt_width = parse_number<int>(key, v);
  else if (key == "embed_width") embed_width = parse_number<int>(key, v);
  else if (key == "tae_hidden") tae_hidden = parse_number<int>(key, v);
  else if (key == "tae_shared") tae_shared = parse_number<int>(key, v);
  else if (key == "tae_experts") tae_experts = parse_number<int>(key, v);
  else if (key == "tae_active") tae_active = parse_number<int>(key, v);
  else if (key == "gamma") gamma = parse_number<double>(key, v);
  else if (key == "n_res") n_res = parse_number<int>(key, v);
  else if (key == "ddp_spatial") ddp_spatial = parse_bool(key, v);
  else if (key == "ddp_frequency") ddp_frequency = parse_bool(key, v);
  else if (key == "steps") steps = parse_number<int>(key, v);
  else if (key == "beta_start") beta_start = parse_number<double>(key, v);
  else if (key == "beta_end") beta_end = parse_number<double>(key, v);
  else if (key == "pyramid") {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<int>(key, item));
    if (out.empty()) throw ValueError("empty pyramid list");
    pyramid = out;
  } else if (key == "sampler") sampler = v;
  else if (key == "stochastic") stochastic = parse_bool(key, v);
  else if (key == "lr") lr = parse_number<double>(key, v);
  else if (key == "adam_beta1") adam_beta1 = parse_number<double>(key, v);
  else if (key == "adam_beta2") adam_beta2 = parse_number<double>(key, v);
  else if (key == "adam_eps") adam_eps = parse_number<double>(key, v);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, v);
  else return false;
  return true;
}

bool is_architecture_field(const std::string& key) {
  static const char* kArch[] = {"base_channels", "depth", "stem_stride", "prompt_atoms", "prompt_width", "embed_width",
                                "tae_hidden",    "tae_shared",  "tae_experts",  "tae_active",   "n_res",
                                "steps",         "beta_start",  "beta_end",     "pyramid"};
  for (const char* k : kArch) {
    if (key == k) return true;
  }
  return false;
}

}  // namespace endoir::model
