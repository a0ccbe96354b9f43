#include "endoir/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "endoir/tensor/ops.hpp"

namespace endoir::nn {

Tensor ParameterSet::add(const std::string& name, Tensor t) {
  if (contains(name)) throw std::logic_error("duplicate parameter name " + name);
  t.set_requires_grad(true);
  entries_.emplace_back(name, t);
  return t;
}

Tensor ParameterSet::get(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return t;
  }
  throw std::out_of_range("no parameter named " + name);
}

bool ParameterSet::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.first == name; });
}

std::int64_t ParameterSet::numel() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.second.numel();
  return n;
}

void ParameterSet::clear_grads() {
  for (auto& e : entries_) e.second.clear_grad();
}

Tensor Init::uniform(Shape shape, double bound) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(-bound, bound);
  for (auto& v : t.data_mut()) v = d(rng_);
  return t;
}

Tensor Init::normal(Shape shape, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, stddev);
  for (auto& v : t.data_mut()) v = d(rng_);
  return t;
}

void fill(Tensor t, double v) {
  auto d = t.data_mut();
  std::fill(d.begin(), d.end(), v);
}

Conv2d::Conv2d(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t out, int kernel, int s,
               Init& init)
    : stride(s), padding(kernel / 2) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  weight = ps.add(name + ".weight", init.uniform({out, in, kernel, kernel}, bound));
  bias = ps.add(name + ".bias", init.uniform({out}, bound));
}

Tensor Conv2d::operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, padding); }

Linear::Linear(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t out, Init& init) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = ps.add(name + ".weight", init.uniform({out, in}, bound));
  bias = ps.add(name + ".bias", init.uniform({out}, bound));
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

ChannelNorm::ChannelNorm(ParameterSet& ps, const std::string& name, std::int64_t channels) {
  gain = ps.add(name + ".gain", Tensor::ones({channels}));
  shift = ps.add(name + ".shift", Tensor::zeros({channels}));
}

Tensor ChannelNorm::operator()(const Tensor& x) const { return layer_norm(x, {1}, gain, shift, eps); }

FeedForward::FeedForward(ParameterSet& ps, const std::string& name, std::int64_t channels, Init& init)
    : expand(ps, name + ".expand", channels, 2 * channels, 3, 1, init),
      project(ps, name + ".project", 2 * channels, channels, 1, 1, init) {}

Tensor FeedForward::operator()(const Tensor& z) const { return add(z, project(gelu(expand(z)))); }

Mlp::Mlp(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t hidden, std::int64_t out,
         Init& init)
    : l1(ps, name + ".l1", in, hidden, init), l2(ps, name + ".l2", hidden, out, init) {}

Tensor Mlp::operator()(const Tensor& x) const { return l2(gelu(l1(x))); }

}  // namespace endoir::nn
