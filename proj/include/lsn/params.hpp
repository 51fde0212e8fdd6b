#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lsn/rng.hpp"
#include "lsn/tensor.hpp"

namespace lsn {

/// Named trainable tensors in registration order. The order is part of the
/// checkpoint format and of every deterministic iteration over parameters.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor value);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t total_numel() const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void zero_grad();

  // Elementwise copy of values from `other`; names and shapes must agree.
  void copy_values_from(const ParameterStore& other);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace init {

// N(0, 2 / fan_in), the usual choice in front of a ReLU.
Tensor kaiming_normal(Rng& rng, Shape shape, std::size_t fan_in);
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Tensor fan_in_uniform(Rng& rng, Shape shape, std::size_t fan_in);
Tensor uniform(Rng& rng, Shape shape, Scalar lo, Scalar hi);
Tensor constant(Shape shape, Scalar value);

}  // namespace init

}  // namespace lsn
