#include <cmath>
#include <numeric>
#include <string>

#include "endoir/nn/blocks.hpp"
#include "endoir/tensor/profile.hpp"

namespace endoir::nn {

NoiseAwareRouting::NoiseAwareRouting(ParameterSet& ps, const std::string& name, std::int64_t channels,
                                     std::int64_t cond_width, int n_res, Init& init)
    : cond_proj(ps, name + ".cond_proj", cond_width, channels, init),
      lin1(ps, name + ".lin1", channels, channels, init),
      lin2(ps, name + ".lin2", channels, channels, init) {
  if (n_res < 1) throw ValueError("N_res must be >= 1, got " + std::to_string(n_res));
  const double bound = 1.0 / 3.0;  // fan_in of a 3x3 depthwise filter is 9
  for (int i = 0; i < n_res; ++i) {
    const std::string p = name + ".res" + std::to_string(i);
    ChannelResBlock rb;
    rb.w1 = ps.add(p + ".w1", init.uniform({channels, 1, 3, 3}, bound));
    rb.b1 = ps.add(p + ".b1", init.uniform({channels}, bound));
    rb.w2 = ps.add(p + ".w2", init.uniform({channels, 1, 3, 3}, bound));
    rb.b2 = ps.add(p + ".b2", init.uniform({channels}, bound));
    res.push_back(rb);
  }
}

std::int64_t routed_channel_count(std::int64_t channels, double gamma) {
  const auto k = static_cast<std::int64_t>(std::floor(gamma * static_cast<double>(channels)));
  return std::max<std::int64_t>(1, k);
}

Tensor refine_channels(const Tensor& selected, const IndexList& idx, const NoiseAwareRouting& narb) {
  ProfileScope scope("refine");
  Tensor z = selected;
  for (const auto& rb : narb.res) {
    Tensor h = depthwise_conv2d(z, index_select(rb.w1, 0, idx), index_select(rb.b1, 0, idx), 1);
    h = depthwise_conv2d(gelu(h), index_select(rb.w2, 0, idx), index_select(rb.b2, 0, idx), 1);
    z = add(z, h);
  }
  return z;
}

Tensor dense_refine(const Tensor& x, const NoiseAwareRouting& narb) {
  IndexList all(static_cast<std::size_t>(x.size(1)));
  std::iota(all.begin(), all.end(), 0);
  return refine_channels(x, all, narb);
}

NarbOutput narb_forward(const Tensor& f_in, const Tensor& cond, double gamma, const NoiseAwareRouting& narb) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ValueError("gamma must lie in (0,1], got " + std::to_string(gamma));
  if (f_in.rank() != 4 || f_in.size(1) != narb.channels()) {
    throw ShapeError("narb_forward: input " + shape_str(f_in.shape()) + " for a " +
                     std::to_string(narb.channels()) + "-channel block");
  }
  const auto n = f_in.size(0), c = f_in.size(1);
  const auto k = routed_channel_count(c, gamma);

  Tensor fc = add(reshape(adaptive_avg_pool(f_in), {n, c}), narb.cond_proj(cond));
  Tensor a = softmax(narb.lin2(narb.lin1(fc)), 1);

  NarbOutput out;
  std::vector<Tensor> rows;
  for (std::int64_t i = 0; i < n; ++i) {
    RoutingDecision d;
    auto rel = a.data().subspan(static_cast<std::size_t>(i * c), static_cast<std::size_t>(c));
    d.relevance = Tensor({c}, std::vector<double>(rel.begin(), rel.end()));
    d.selected = topk_indices(rel, k);
    d.gamma = gamma;
    Tensor xi = n == 1 ? f_in : narrow(f_in, 0, i, 1);
    Tensor refined = refine_channels(index_select(xi, 1, d.selected), d.selected, narb);
    rows.push_back(index_scatter(xi, refined, 1, d.selected));
    out.decisions.push_back(std::move(d));
  }
  out.out = n == 1 ? rows[0] : concat(std::span<const Tensor>(rows), 0);
  return out;
}

}  // namespace endoir::nn
