#include "endoir/tensor/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "endoir/tensor/ops.hpp"

namespace endoir {

namespace {
std::string g_fault_op;
double g_fault_factor = 1.0;
}  // namespace

namespace detail {
void set_gradient_fault(const std::string& op, double factor) {
  g_fault_op = op;
  g_fault_factor = factor;
}
const std::string& gradient_fault_op() { return g_fault_op; }
double gradient_fault_factor() { return g_fault_factor; }
}  // namespace detail

Tensor random_projection(const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(static_cast<std::size_t>(y.numel()));
  for (auto& v : w) v = u(rng);
  return sum(mul(y, Tensor(y.shape(), std::move(w))));
}

GradCheckResult grad_check(const std::string& name, const std::function<Tensor()>& loss_fn,
                           std::vector<Tensor> inputs, const GradCheckOptions& opt) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  {
    GradTape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
  }

  std::mt19937_64 rng(opt.seed);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  GradCheckResult res;
  res.name = name;
  for (auto& t : inputs) {
    const auto n = t.numel();
    std::vector<std::int64_t> coords(static_cast<std::size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (opt.max_coords_per_tensor > 0 && n > opt.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(opt.max_coords_per_tensor));
    }
    const std::vector<double> analytic =
        t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end()) : std::vector<double>(n, 0.0);
    auto data = t.data_mut();
    for (auto c : coords) {
      const double orig = data[c];
      data[c] = orig + opt.eps;
      const double lp = loss_fn().item();
      data[c] = orig - opt.eps;
      const double lm = loss_fn().item();
      data[c] = orig;
      const double num = (lp - lm) / (2.0 * opt.eps);
      const double an = analytic[static_cast<std::size_t>(c)];
      diff2 += (an - num) * (an - num);
      a2 += an * an;
      n2 += num * num;
      ++res.coords;
    }
    t.clear_grad();
  }
  res.rel_error = std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  res.passed = std::isfinite(res.rel_error) && res.rel_error <= opt.tolerance;
  return res;
}

}  // namespace endoir
