#include "lsn/layers.hpp"

#include "lsn/ops.hpp"

namespace lsn {

Linear Linear::make(ParameterStore& params, Rng& rng, const std::string& name, std::size_t in,
                    std::size_t out, Init init) {
  Linear l;
  switch (init) {
    case Init::kFanIn:
      l.weight = params.add(name + ".w", init::fan_in_uniform(rng, {in, out}, in));
      break;
    case Init::kZero:
      l.weight = params.add(name + ".w", init::constant({in, out}, 0));
      break;
    case Init::kSmall:
      l.weight = params.add(name + ".w", init::uniform(rng, {in, out}, Scalar(-1e-2), Scalar(1e-2)));
      break;
  }
  l.bias = params.add(name + ".b", init::constant({out}, 0));
  return l;
}

Tensor Linear::operator()(Tape& tape, const Tensor& x) const { return ops::linear(tape, x, weight, bias); }

LayerNorm LayerNorm::make(ParameterStore& params, const std::string& name, std::size_t dim) {
  return {params.add(name + ".gain", init::constant({dim}, 1)),
          params.add(name + ".bias", init::constant({dim}, 0))};
}

Tensor LayerNorm::operator()(Tape& tape, const Tensor& x) const {
  return ops::layer_norm(tape, x, gain, bias);
}

FeedForward FeedForward::make(ParameterStore& params, Rng& rng, const std::string& name,
                              std::size_t dim, std::size_t hidden, Linear::Init out_init,
                              std::size_t out_dim) {
  return {Linear::make(params, rng, name + ".fc1", dim, hidden),
          Linear::make(params, rng, name + ".fc2", hidden, out_dim ? out_dim : dim, out_init)};
}

Tensor FeedForward::operator()(Tape& tape, const Tensor& x) const {
  return fc2(tape, ops::relu(tape, fc1(tape, x)));
}

}  // namespace lsn
