#include "endoir/tensor/tensor.hpp"

#include "endoir/tensor/gradcheck.hpp"

#include <algorithm>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace endoir {

namespace {
// Large activations are allocated and freed every op. With glibc's default
// thresholds each one is a fresh mmap and pays page faults on first touch,
// which costs more than the arithmetic; keep them on the heap instead.
[[maybe_unused]] const bool kAllocatorTuned = [] {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return true;
}();
}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  const auto n = shape_numel(shape);
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<std::size_t>(n), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  const auto n = shape_numel(shape);
  if (static_cast<std::int64_t>(values.size()) != n) {
    throw ShapeError("tensor of shape " + shape_str(shape) + " needs " + std::to_string(n) +
                     " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, value); }

detail::TensorImpl& Tensor::impl() const {
  if (!impl_) throw std::logic_error("use of undefined tensor");
  return *impl_;
}

const Shape& Tensor::shape() const { return impl().shape; }

std::int64_t Tensor::size(int dim) const {
  const int r = rank();
  const int d = dim < 0 ? dim + r : dim;
  if (d < 0 || d >= r) {
    throw ShapeError("dim " + std::to_string(dim) + " out of range for shape " + shape_str(shape()));
  }
  return shape()[static_cast<std::size_t>(d)];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl().data[0];
}

double Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
  std::int64_t off = 0;
  std::size_t i = 0;
  for (auto v : index) {
    if (v < 0 || v >= s[i]) throw ShapeError("index out of range for " + shape_str(s));
    off = off * s[i] + v;
    ++i;
  }
  return impl().data[static_cast<std::size_t>(off)];
}

Tensor& Tensor::set_requires_grad(bool value) {
  impl().requires_grad = value;
  return *this;
}

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::grad_buffer() {
  auto& im = impl();
  if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0);
  return im.grad;
}

void Tensor::zero_grad() {
  auto& im = impl();
  std::fill(im.grad.begin(), im.grad.end(), 0.0);
}

void Tensor::clear_grad() { impl().grad.clear(); }

Tensor Tensor::clone() const { return Tensor(shape(), impl().data); }

Tensor Tensor::grad_tensor() const {
  if (!has_grad()) return Tensor(shape(), 0.0);
  return Tensor(shape(), impl_->grad);
}

// --- GradTape ---------------------------------------------------------------

namespace {
thread_local GradTape* g_current_tape = nullptr;
}

GradTape::GradTape() : previous_(g_current_tape) { g_current_tape = this; }

GradTape::~GradTape() { g_current_tape = previous_; }

GradTape* GradTape::current() { return g_current_tape; }

void GradTape::record(std::string op, Tensor output, BackwardFn fn) {
  if (replayed_) throw std::logic_error("recording onto a tape that was already replayed");
  entries_.push_back(Entry{std::move(op), std::move(output), std::move(fn), 0});
}

void GradTape::backward(const Tensor& loss, double seed) {
  if (replayed_) throw std::logic_error("tape already replayed; run a new forward pass");
  if (loss.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) throw std::logic_error("loss does not depend on any tensor requiring grad");
  replayed_ = true;
  Tensor l = loss;
  l.grad_buffer()[0] += seed;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    auto& e = *it;
    auto g = e.output.grad_buffer();
    e.fn(g);
    ++e.replays;
    // intermediate grads are not needed once propagated
    if (!e.output.is_leaf()) e.output.clear_grad();
  }
}

std::vector<int> GradTape::replay_counts() const {
  std::vector<int> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.replays);
  return out;
}

std::vector<std::string> GradTape::op_names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.op);
  return out;
}

namespace detail {

GradTape* recording_tape(std::initializer_list<const Tensor*> inputs) {
  GradTape* tape = GradTape::current();
  if (!tape) return nullptr;
  for (const Tensor* t : inputs) {
    if (t && t->defined() && t->requires_grad()) return tape;
  }
  return nullptr;
}

GradTape* recording_tape(std::span<const Tensor> inputs) {
  GradTape* tape = GradTape::current();
  if (!tape) return nullptr;
  for (const Tensor& t : inputs) {
    if (t.defined() && t.requires_grad()) return tape;
  }
  return nullptr;
}

void record(GradTape* tape, std::string op, Tensor& out, GradTape::BackwardFn fn) {
  out.impl().requires_grad = true;
  out.impl().is_leaf = false;
  if (!gradient_fault_op().empty() && op == gradient_fault_op()) {
    const double f = gradient_fault_factor();
    fn = [inner = std::move(fn), f](std::span<const double> g) {
      std::vector<double> scaled(g.begin(), g.end());
      for (auto& v : scaled) v *= f;
      inner(scaled);
    };
  }
  tape->record(std::move(op), out, std::move(fn));
}

void accumulate_grad(const Tensor& t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  Tensor handle = t;
  auto buf = handle.grad_buffer();
  if (buf.size() != g.size()) throw std::logic_error("gradient size mismatch during accumulation");
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace detail
}  // namespace endoir
