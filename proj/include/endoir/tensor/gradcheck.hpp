#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "endoir/tensor/tensor.hpp"

namespace endoir {

struct GradCheckOptions {
  double eps = 1e-3;
  double tolerance = 1e-3;
  // Coordinates probed per tensor; <= 0 probes every element.
  std::int64_t max_coords_per_tensor = 0;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  std::string name;
  double rel_error = 0.0;
  std::int64_t coords = 0;
  bool passed = false;
};

// Compares reverse-mode gradients of loss_fn() w.r.t. `inputs` against central
// differences. rel = ||a - n|| / max(||a||, ||n||, 1e-12) over all probed
// coordinates. loss_fn must be a pure function of the inputs' data.
GradCheckResult grad_check(const std::string& name, const std::function<Tensor()>& loss_fn,
                           std::vector<Tensor> inputs, const GradCheckOptions& opt = {});

// Scalar projection sum(w * y) with fixed pseudo-random w, so every output
// element contributes a distinct weight to the checked loss.
Tensor random_projection(const Tensor& y, std::uint64_t seed);

namespace detail {
// Test fixture: while set, the backward closure of the named op receives its
// upstream gradient scaled by `factor`. Empty name disables.
void set_gradient_fault(const std::string& op, double factor = 0.5);
const std::string& gradient_fault_op();
double gradient_fault_factor();
}  // namespace detail

}  // namespace endoir
