#pragma once

// Dense row-major tensor with an explicit reverse-mode gradient tape.
//
// A Tensor is a shared handle: copies alias the same buffer. Values are
// treated as immutable once an op has produced them; only gradients
// accumulate. Parameters are the exception and are updated in place by the
// optimizer between forward passes.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lsn {

#ifdef LSN_SCALAR_FLOAT
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Scalar> values,
                     bool requires_grad = false);
  static Tensor scalar(Scalar value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->value.size(); }

  std::span<const Scalar> data() const { return impl_->value; }
  const std::vector<Scalar>& values() const { return impl_->value; }
  Scalar at(std::size_t flat) const { return impl_->value[flat]; }
  Scalar item() const;

  // In-place value access. Only parameters and freshly built tensors should
  // be written through this.
  std::span<Scalar> mutable_data() { return impl_->value; }

  bool requires_grad() const { return impl_->requires_grad; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const Scalar> grad() const { return impl_->grad; }
  // Allocates a zero gradient on first use.
  std::span<Scalar> grad_buffer() const;
  void zero_grad();

  // Copy of the values, outside any tape.
  Tensor detach() const;

  // Identity of the underlying buffer.
  const void* id() const { return impl_.get(); }

 private:
  struct Impl {
    Shape shape;
    std::vector<Scalar> value;
    std::vector<Scalar> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable operations for one forward pass.
///
/// Ops append a node when any of their inputs requires a gradient. backward()
/// walks the nodes once in reverse creation order; calling it twice without
/// reset() is a logic error.
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  explicit Tape(bool enabled = true);

  bool enabled() const { return enabled_; }

  // When set, every op output is scanned for NaN/Inf. On by default in
  // builds without NDEBUG.
  void set_check_finite(bool on) { check_finite_ = on; }
  bool check_finite() const { return check_finite_; }

  void record(std::string_view op, const Tensor& out, BackwardFn fn);
  void backward(const Tensor& loss);
  void reset();

  std::size_t size() const { return nodes_.size(); }
  std::size_t nodes_visited() const { return visited_; }

  // Multiply-accumulate count of every op run through this tape, whether
  // recorded or not.
  std::uint64_t macs() const { return macs_; }
  void add_macs(std::uint64_t n) { macs_ += n; }

  void validate(std::string_view op, const Tensor& out) const;

 private:
  struct Node {
    std::string op;
    Tensor out;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  bool enabled_;
  bool check_finite_;
  bool consumed_ = false;
  std::size_t visited_ = 0;
  std::uint64_t macs_ = 0;
};

}  // namespace lsn
