#include "lsn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lsn/errors.hpp"

namespace lsn {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
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

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Scalar(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in " + shape_str(shape));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->value.assign(shape_numel(shape), value);
  t.impl_->shape = std::move(shape);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("zero-sized dimension in " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = std::move(shape);
  t.impl_->value = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(Scalar value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

Scalar Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->value[0];
}

std::span<Scalar> Tensor::grad_buffer() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->value.size(), Scalar(0));
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return from(shape(), impl_->value, false); }

Tape::Tape(bool enabled)
    : enabled_(enabled),
#ifdef NDEBUG
      check_finite_(false)
#else
      check_finite_(true)
#endif
{
}

void Tape::validate(std::string_view op, const Tensor& out) const {
  if (!check_finite_) return;
  for (Scalar v : out.data()) {
    if (!std::isfinite(v)) {
      throw ValueError("non-finite value produced by " + std::string(op));
    }
  }
}

void Tape::record(std::string_view op, const Tensor& out, BackwardFn fn) {
  if (consumed_) throw std::logic_error("recording onto a tape after backward()");
  nodes_.push_back(Node{std::string(op), out, std::move(fn)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) {
    throw std::logic_error("backward() called twice on the same tape without reset()");
  }
  if (loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  consumed_ = true;
  if (!loss.requires_grad()) return;
  Tensor seed = loss;
  seed.grad_buffer()[0] += Scalar(1);
  visited_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    ++visited_;
    if (!it->out.has_grad()) continue;
    it->fn();
  }
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
  visited_ = 0;
  macs_ = 0;
}

}  // namespace lsn
