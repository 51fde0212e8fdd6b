#pragma once

// Differentiable tensor operations. Every op takes the tape explicitly;
// results require a gradient iff the tape is enabled and any input does.

#include <cstddef>
#include <span>
#include <vector>

#include "lsn/tensor.hpp"

namespace lsn::ops {

// a[m,k] x b[k,n] -> [m,n]
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

// x[N,in] · w[in,out] + b[out]. `b` may be undefined.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b);

// Elementwise, identical shapes.
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);

// x[N,D] + v[D] broadcast over rows.
Tensor add_row(Tape& tape, const Tensor& x, const Tensor& v);

Tensor scale(Tape& tape, const Tensor& x, Scalar s);
Tensor add_scalar(Tape& tape, const Tensor& x, Scalar c);
Tensor relu(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor abs(Tape& tape, const Tensor& x);
// 1 / sqrt(x + eps)
Tensor rsqrt(Tape& tape, const Tensor& x, Scalar eps);

// Numerically stable softmax along `axis` (negative counts from the back).
Tensor softmax(Tape& tape, const Tensor& x, int axis);

// Normalizes the last axis to zero mean / unit variance, then gain and bias.
inline constexpr Scalar kLayerNormEps = Scalar(1e-5);
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, Scalar eps = kLayerNormEps);

Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

// out.flat[i] = x.flat[index[i]]; the gradient scatters back. Covers
// slicing, transposition, broadcasting and permutation.
Tensor gather(Tape& tape, const Tensor& x, std::vector<std::size_t> index,
              Shape out_shape);
Tensor transpose2d(Tape& tape, const Tensor& x);
// Rows `rows` of a 2-D tensor.
Tensor take_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows);

Tensor sum(Tape& tape, const Tensor& x);
Tensor mean(Tape& tape, const Tensor& x);

// Cross-correlation (no kernel flip). x[C_in,H,W], kernels[C_out,C_in,kh,kw],
// optional bias[C_out]. Output spatial size floor((H + 2p - kh) / stride) + 1.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& kernels,
              const Tensor& bias, std::size_t stride, std::size_t padding);
std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                          std::size_t padding);

Tensor max_pool2d(Tape& tape, const Tensor& x, std::size_t kernel,
                  std::size_t stride, std::size_t padding);

// Samples map[C,H,W] at normalized points[N,2] given as (u, v), u along the
// width. Pixel centers sit at ((i + 0.5) / W, (j + 0.5) / H). Corners outside
// the map read as zero, and any point outside [0,1]^2 returns zero.
// Differentiable in both the map and the point coordinates.
Tensor bilinear_sample(Tape& tape, const Tensor& map, const Tensor& points);

struct LevelShape {
  std::size_t height = 0;
  std::size_t width = 0;
};

// Fused deformable-attention sampling core.
//
// values[l] is [H_l * W_l, D] (position-major, row index = y * W_l + x).
// D is split into `heads` groups of D / heads channels. For every query n,
// head h and sample s (belonging to level level_of_sample[s]):
//
//   out[n, h-group] += weights[n,h,s] * scale[n,s]
//                      * bilinear(values[level][:, h-group], locations[n,h,s])
//
// locations is [N, heads, S, 2] in normalized (u, v); weights is
// [N, heads, S]. `sample_scale` is a constant [N * S] multiplier (empty means
// all ones); entries equal to zero are skipped entirely.
Tensor deform_sample(Tape& tape, const std::vector<Tensor>& values,
                     std::span<const LevelShape> levels,
                     std::span<const std::size_t> level_of_sample,
                     const Tensor& locations, const Tensor& weights,
                     std::span<const Scalar> sample_scale = {});

// Weighted mean cross-entropy: sum_i w[t_i] * -log softmax(logits_i)[t_i]
// divided by sum_i w[t_i].
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> targets,
                     std::span<const Scalar> class_weights);

}  // namespace lsn::ops
