#include <cmath>
#include <stdexcept>
#include <string>

#include "endoir/nn/blocks.hpp"

namespace endoir::nn {

PromptDictionary::PromptDictionary(ParameterSet& ps, const std::string& name, std::int64_t atoms_m,
                                   std::int64_t width, Init& init) {
  if (atoms_m < 2) throw ValueError("prompt dictionary needs at least 2 atoms, got " + std::to_string(atoms_m));
  atoms = ps.add(name + ".atoms", init.normal({atoms_m, width}, 1.0 / std::sqrt(static_cast<double>(width))));
}

DdpStems::DdpStems(ParameterSet& ps, const std::string& name, std::int64_t in_channels, std::int64_t atoms_m,
                   Init& init)
    : spatial(ps, name + ".spatial", in_channels, atoms_m, 3, 1, init),
      frequency(ps, name + ".frequency", in_channels, atoms_m, 3, 1, init) {}

Tensor log_magnitude_spectrum(const Tensor& x) {
  auto f = fft2(x);
  // The 1e-12 floor keeps d|X| finite at exactly-zero bins.
  Tensor power = add_scalar(add(mul(f.real, f.real), mul(f.imag, f.imag)), 1e-12);
  return log1p(sqrt(power));
}

Tensor ddp_forward(const Tensor& x, const PromptDictionary& dict, const DdpStems& stems, DdpTrace* trace) {
  if (x.rank() != 4) throw ShapeError("ddp_forward expects [N,C,H,W], got " + shape_str(x.shape()));
  const auto n = x.size(0), m = dict.count();
  Tensor logits;
  if (stems.use_spatial) logits = stems.spatial(x);
  if (stems.use_frequency) {
    Tensor f = stems.frequency(log_magnitude_spectrum(x));
    logits = logits.defined() ? add(logits, f) : f;
  }
  if (!logits.defined()) logits = Tensor::zeros({n, m, x.size(2), x.size(3)});
  if (logits.size(1) != m) {
    throw ShapeError("ddp_forward: stems give " + std::to_string(logits.size(1)) + " logits for " +
                     std::to_string(m) + " atoms");
  }
  Tensor weights = softmax(logits, 1);
  if (trace) trace->site_weights = weights;
  // Pooling commutes with the per-site atom mix, so pool the weights first.
  Tensor pooled = reshape(adaptive_avg_pool(weights), {n, m});
  return matmul(pooled, dict.atoms);
}

TaskAdaptiveEmbedding::TaskAdaptiveEmbedding(ParameterSet& ps, const std::string& name, std::int64_t prompt_width,
                                             std::int64_t out_width, std::int64_t hidden, int n_shared,
                                             int n_experts, int k, Init& init)
    : k_active(k) {
  if (n_shared < 0 || n_experts < 1) throw ValueError("task embedding needs >= 1 expert");
  if (k < 1 || k > n_experts) {
    throw ValueError("k_active=" + std::to_string(k) + " outside [1," + std::to_string(n_experts) + "]");
  }
  for (int i = 0; i < n_shared; ++i)
    shared.emplace_back(ps, name + ".shared" + std::to_string(i), prompt_width, hidden, out_width, init);
  for (int i = 0; i < n_experts; ++i)
    experts.emplace_back(ps, name + ".expert" + std::to_string(i), prompt_width, hidden, out_width, init);
  gate = Linear(ps, name + ".gate", prompt_width, n_experts, init);
}

Tensor tae_forward(const Tensor& prompt, const TaskAdaptiveEmbedding& tae, TaeTrace* trace) {
  const auto k_total = static_cast<std::int64_t>(tae.experts.size());
  if (tae.k_active < 1 || tae.k_active > k_total) {
    throw ValueError("k_active=" + std::to_string(tae.k_active) + " outside [1," + std::to_string(k_total) + "]");
  }
  const auto n = prompt.size(0);
  Tensor probs = softmax(tae.gate(prompt), 1);
  Tensor mask({n, k_total}, 0.0);
  std::vector<IndexList> active;
  for (std::int64_t i = 0; i < n; ++i) {
    auto row = probs.data().subspan(static_cast<std::size_t>(i * k_total), static_cast<std::size_t>(k_total));
    active.push_back(topk_indices(row, tae.k_active));
    for (auto k : active.back()) mask.data_mut()[i * k_total + k] = 1.0;
  }
  Tensor weights = mul(probs, mask);

  Tensor e;
  for (const auto& mlp : tae.shared) {
    Tensor s = mlp(prompt);
    e = e.defined() ? add(e, s) : s;
  }
  for (std::int64_t k = 0; k < k_total; ++k) {
    Tensor term = mul(tae.experts[static_cast<std::size_t>(k)](prompt), narrow(weights, 1, k, 1));
    e = e.defined() ? add(e, term) : term;
  }
  if (trace) {
    trace->gate_probs = probs;
    trace->gate_weights = weights;
    trace->active = std::move(active);
  }
  return e;
}

}  // namespace endoir::nn
