#pragma once

// Small parameterized building blocks shared by the encoder and decoder.

#include <string>

#include "lsn/params.hpp"
#include "lsn/tensor.hpp"

namespace lsn {

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  enum class Init { kFanIn, kZero, kSmall };
  static Linear make(ParameterStore& params, Rng& rng, const std::string& name, std::size_t in,
                     std::size_t out, Init init = Init::kFanIn);
  Tensor operator()(Tape& tape, const Tensor& x) const;
  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
};

struct LayerNorm {
  Tensor gain, bias;
  static LayerNorm make(ParameterStore& params, const std::string& name, std::size_t dim);
  Tensor operator()(Tape& tape, const Tensor& x) const;
};

/// Two linear layers with a ReLU in between.
struct FeedForward {
  Linear fc1, fc2;
  static FeedForward make(ParameterStore& params, Rng& rng, const std::string& name, std::size_t dim,
                          std::size_t hidden, Linear::Init out_init = Linear::Init::kFanIn,
                          std::size_t out_dim = 0);
  Tensor operator()(Tape& tape, const Tensor& x) const;
};

}  // namespace lsn
