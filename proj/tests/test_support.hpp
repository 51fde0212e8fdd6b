#pragma once

// Shared helpers for the unit and acceptance suites: random tensors and a
// central finite-difference gradient oracle that never touches the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "lsn/ops.hpp"
#include "lsn/rng.hpp"
#include "lsn/tensor.hpp"

namespace lsn::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0,
                            bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (Scalar& v : t.mutable_data()) v = static_cast<Scalar>(rng.uniform(lo, hi));
  return t;
}

// Values bounded away from zero, for ops with a kink at the origin.
inline Tensor random_nonzero(Rng& rng, Shape shape, double margin = 0.05) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (Scalar& v : t.mutable_data()) {
    const double mag = rng.uniform(margin, 1.0);
    v = static_cast<Scalar>(rng.uniform() < 0.5 ? -mag : mag);
  }
  return t;
}

// Normalized coordinate whose pixel position stays `margin` pixels away from
// a pixel-center line, where bilinear interpolation has a kink.
inline Scalar smooth_coord(Rng& rng, std::size_t cells, double margin = 0.02) {
  for (;;) {
    const double u = rng.uniform(0.02, 0.98);
    const double x = u * static_cast<double>(cells) - 0.5;
    const double frac = x - std::floor(x);
    if (frac > margin && frac < 1.0 - margin) return static_cast<Scalar>(u);
  }
}

using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

struct GradCheckResult {
  // Per input: max |analytic - numeric| / max(max |numeric|, 1e-6).
  std::vector<double> rel_error;
  double worst() const {
    return rel_error.empty() ? 0.0 : *std::max_element(rel_error.begin(), rel_error.end());
  }
};

// Compares tape gradients of the scalar `fn(inputs)` with central differences.
// Only inputs with requires_grad are checked.
inline GradCheckResult grad_check(const ScalarFn& fn, std::vector<Tensor> inputs,
                                  double h = 1e-4) {
  for (Tensor& t : inputs) t.zero_grad();
  {
    Tape tape;
    Tensor loss = fn(tape, inputs);
    tape.backward(loss);
  }
  GradCheckResult res;
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<Scalar> analytic(t.numel(), Scalar(0));
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    double max_num = 0, max_diff = 0;
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Scalar orig = data[i];
      Tape off(false);
      data[i] = orig + static_cast<Scalar>(h);
      const double fp = fn(off, inputs).item();
      data[i] = orig - static_cast<Scalar>(h);
      const double fm = fn(off, inputs).item();
      data[i] = orig;
      const double num = (fp - fm) / (2 * h);
      max_num = std::max(max_num, std::abs(num));
      max_diff = std::max(max_diff, std::abs(num - static_cast<double>(analytic[i])));
    }
    res.rel_error.push_back(max_diff / std::max(max_num, 1e-6));
  }
  return res;
}

// sum(out * probe) for a fixed random probe, turning any output into a scalar
// whose gradient exercises every output element.
inline Tensor probe_sum(Tape& tape, const Tensor& out, const Tensor& probe) {
  return ops::sum(tape, ops::mul(tape, out, probe));
}

inline Tensor probe_for(Rng& rng, const Shape& shape) {
  return random_tensor(rng, shape, -1.0, 1.0, false);
}

// probe_sum with a probe regenerated from `seed`, identical on every call.
inline Tensor seeded_probe_sum(Tape& tape, const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  return probe_sum(tape, out, probe_for(rng, out.shape()));
}

}  // namespace lsn::testing
