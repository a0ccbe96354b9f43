#include <cmath>

#include "endoir/nn/blocks.hpp"

namespace endoir::nn {

StreamEmbed::StreamEmbed(ParameterSet& ps, const std::string& name, std::int64_t channels, Init& init)
    : conv_in(ps, name + ".conv_in", channels, channels, 3, 1, init),
      norm(ps, name + ".norm", channels),
      conv_out(ps, name + ".conv_out", channels, channels, 3, 1, init) {}

Tensor StreamEmbed::operator()(const Tensor& x) const { return conv_out(norm(conv_in(x))); }

DseStage::DseStage(ParameterSet& ps, const std::string& name, std::int64_t channels, Init& init)
    : embed_x(ps, name + ".embed_x", channels, init),
      embed_y(ps, name + ".embed_y", channels, init),
      ffn_x(ps, name + ".ffn_x", channels, init),
      ffn_y(ps, name + ".ffn_y", channels, init) {}

Tensor spatial_self_attention(const Tensor& z) {
  const auto n = z.size(0), c = z.size(1), h = z.size(2), w = z.size(3);
  Tensor zf = reshape(z, {n, c, h * w});
  Tensor s = mul_scalar(matmul(zf, zf, true, false), 1.0 / std::sqrt(static_cast<double>(c)));
  Tensor a = softmax(s, 2);
  return reshape(matmul(zf, a, false, true), {n, c, h, w});
}

std::pair<Tensor, Tensor> dse_forward(const Tensor& x_feat, const Tensor& y_feat, const DseStage& stage) {
  if (x_feat.shape() != y_feat.shape()) {
    throw ShapeError("dse_forward: streams differ " + shape_str(x_feat.shape()) + " vs " + shape_str(y_feat.shape()));
  }
  Tensor ex = stage.embed_x(x_feat);
  Tensor ey = stage.embed_y(y_feat);
  auto parts = chunk(spatial_self_attention(concat({ex, ey}, 1)), 2, 1);
  return {stage.ffn_x(parts[0]), stage.ffn_y(parts[1])};
}

RectifiedFusion::RectifiedFusion(ParameterSet& ps, const std::string& name, std::int64_t channels, Init& init)
    : norm_x(ps, name + ".norm_x", channels),
      norm_y(ps, name + ".norm_y", channels),
      qk(ps, name + ".qk", channels, 2 * channels, 1, 1, init),
      v(ps, name + ".v", channels, channels, 1, 1, init),
      out(ps, name + ".out", channels, channels, 1, 1, init),
      ffn(ps, name + ".ffn", channels, init) {
  w1 = ps.add(name + ".w1", Tensor::ones({1}));
  w2 = ps.add(name + ".w2", Tensor::zeros({1}));
}

Tensor modulated_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& w1, const Tensor& w2) {
  if (q.shape() != k.shape() || q.size(0) != v.size(0) || q.size(2) != v.size(2) || q.size(3) != v.size(3)) {
    throw ShapeError("modulated_attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                     shape_str(v.shape()));
  }
  const auto n = q.size(0), c = q.size(1), cv = v.size(1), p = q.size(2) * q.size(3);
  Tensor s = mul_scalar(matmul(reshape(q, {n, c, p}), reshape(k, {n, c, p}), true, false),
                        1.0 / std::sqrt(static_cast<double>(c)));
  Tensor m = add(mul(softmax(s, 2), w1), mul(gelu(s), w2));
  return reshape(matmul(reshape(v, {n, cv, p}), m, false, true), {n, cv, v.size(2), v.size(3)});
}

Tensor rfb_forward(const Tensor& fx, const Tensor& fy, const RectifiedFusion& rfb) {
  if (fx.rank() != 4 || fy.rank() != 4 || fx.size(2) != fy.size(2) || fx.size(3) != fy.size(3)) {
    throw ShapeError("rfb_forward: spatial mismatch " + shape_str(fx.shape()) + " vs " + shape_str(fy.shape()));
  }
  auto qk = chunk(rfb.qk(rfb.norm_x(fx)), 2, 1);
  Tensor v = rfb.v(rfb.norm_y(fy));
  Tensor attn = modulated_attention(qk[0], qk[1], v, rfb.w1, rfb.w2);
  return rfb.ffn(add(rfb.out(attn), fx));
}

}  // namespace endoir::nn
