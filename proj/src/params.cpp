#include "lsn/params.hpp"

#include <cmath>

#include "lsn/errors.hpp"

namespace lsn {

Tensor ParameterStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name: " + name);
  Tensor leaf = Tensor::from(value.shape(), value.values(), true);
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, leaf);
  return leaf;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return entries_[it->second].second;
}

std::size_t ParameterStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void ParameterStore::copy_values_from(const ParameterStore& other) {
  if (other.size() != size()) {
    throw DimensionError("parameter count mismatch: " + std::to_string(other.size()) +
                         " vs " + std::to_string(size()));
  }
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto& [name, t] = entries_[i];
    const auto& [oname, o] = other.entries_[i];
    if (name != oname || t.shape() != o.shape()) {
      throw DimensionError("parameter mismatch: " + name + shape_str(t.shape()) + " vs " +
                           oname + shape_str(o.shape()));
    }
    std::copy(o.data().begin(), o.data().end(), t.mutable_data().begin());
  }
}

namespace init {

Tensor kaiming_normal(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor t = Tensor::zeros(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (Scalar& v : t.mutable_data()) v = static_cast<Scalar>(rng.normal() * sd);
  return t;
}

Tensor fan_in_uniform(Rng& rng, Shape shape, std::size_t fan_in) {
  const Scalar b = static_cast<Scalar>(1.0 / std::sqrt(static_cast<double>(fan_in)));
  return uniform(rng, std::move(shape), -b, b);
}

Tensor uniform(Rng& rng, Shape shape, Scalar lo, Scalar hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Scalar& v : t.mutable_data()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

Tensor constant(Shape shape, Scalar value) { return Tensor::full(std::move(shape), value); }

}  // namespace init

}  // namespace lsn
