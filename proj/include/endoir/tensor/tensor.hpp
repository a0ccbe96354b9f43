#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace endoir {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class ValueError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a gradient is written
  bool requires_grad = false;
  bool is_leaf = true;
};
}  // namespace detail

// Dense row-major array of doubles. Copies are shallow: they alias the same
// storage, which is how parameter tensors are shared between the blocks that
// own them and the ParameterSet / optimizer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  // Negative dims count from the back.
  std::int64_t size(int dim) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(impl().data.size()); }

  std::span<const double> data() const { return impl().data; }
  std::span<double> data_mut() { return impl().data; }
  double item() const;
  double at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool value);
  bool is_leaf() const { return impl().is_leaf; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const double> grad() const;
  // Zero-initialized on first access.
  std::span<double> grad_buffer();
  void zero_grad();
  void clear_grad();

  Tensor clone() const;  // deep copy, no grad, not requiring grad
  Tensor grad_tensor() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl& impl() const;

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Ordered record of executed primitives. While a tape is alive it is the
// current tape of its thread; ops whose inputs require grad append an entry.
// backward() replays the entries in reverse, each exactly once.
class GradTape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out)>;

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  static GradTape* current();

  void record(std::string op, Tensor output, BackwardFn fn);
  void backward(const Tensor& loss, double seed = 1.0);

  std::size_t size() const { return entries_.size(); }
  bool replayed() const { return replayed_; }
  std::vector<int> replay_counts() const;
  std::vector<std::string> op_names() const;

 private:
  struct Entry {
    std::string op;
    Tensor output;
    BackwardFn fn;
    int replays = 0;
  };
  std::vector<Entry> entries_;
  GradTape* previous_ = nullptr;
  bool replayed_ = false;
};

namespace detail {
// Returns the active tape if any of the inputs requires grad, else nullptr.
GradTape* recording_tape(std::initializer_list<const Tensor*> inputs);
GradTape* recording_tape(std::span<const Tensor> inputs);
// Marks `out` as a non-leaf gradient carrier and records the backward closure.
void record(GradTape* tape, std::string op, Tensor& out, GradTape::BackwardFn fn);
// Adds g into t's grad buffer when t requires grad.
void accumulate_grad(const Tensor& t, std::span<const double> g);
}  // namespace detail

}  // namespace endoir
