#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "endoir/tensor/tensor.hpp"

namespace endoir::nn {

// Ordered, named collection of every learnable tensor of a model. Blocks add
// their tensors at construction; the order is the checkpoint order.
class ParameterSet {
 public:
  using Entry = std::pair<std::string, Tensor>;

  Tensor add(const std::string& name, Tensor t);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::int64_t numel() const;
  void clear_grads();

 private:
  std::vector<Entry> entries_;
};

// Seeded initializer shared by all blocks of one model.
class Init {
 public:
  explicit Init(std::uint64_t seed) : rng_(seed) {}
  Tensor uniform(Shape shape, double bound);
  Tensor normal(Shape shape, double stddev);
  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

// Conv with "same" padding (k/2); weights U(+-1/sqrt(fan_in)).
struct Conv2d {
  Tensor weight, bias;
  int stride = 1;
  int padding = 0;

  Conv2d() = default;
  Conv2d(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t out, int kernel, int stride,
         Init& init);
  Tensor operator()(const Tensor& x) const;
};

struct Linear {
  Tensor weight, bias;  // [out,in], [out]

  Linear() = default;
  Linear(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t out, Init& init);
  Tensor operator()(const Tensor& x) const;
};

// LayerNorm over the channel dim of an NCHW map, gain/shift per channel.
struct ChannelNorm {
  Tensor gain, shift;
  double eps = 1e-5;

  ChannelNorm() = default;
  ChannelNorm(ParameterSet& ps, const std::string& name, std::int64_t channels);
  Tensor operator()(const Tensor& x) const;
};

// z + conv1x1(gelu(conv3x3(z))), hidden width 2C.
struct FeedForward {
  Conv2d expand, project;

  FeedForward() = default;
  FeedForward(ParameterSet& ps, const std::string& name, std::int64_t channels, Init& init);
  Tensor operator()(const Tensor& z) const;
};

// linear -> gelu -> linear
struct Mlp {
  Linear l1, l2;

  Mlp() = default;
  Mlp(ParameterSet& ps, const std::string& name, std::int64_t in, std::int64_t hidden, std::int64_t out, Init& init);
  Tensor operator()(const Tensor& x) const;
};

// Sets every element of the tensor (in place) to v.
void fill(Tensor t, double v);

}  // namespace endoir::nn
