#include "lsn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gemm.hpp"
#include "lsn/errors.hpp"

namespace lsn::ops {
namespace {

bool needs_grad(const Tape& tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape.enabled()) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

Tensor make_out(Tape& tape, std::string_view op, Shape shape,
                std::vector<Scalar> values, bool rg) {
  Tensor out = Tensor::from(std::move(shape), std::move(values), rg);
  tape.validate(op, out);
  return out;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.ndim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

// Corner weights for one bilinear lookup in a W x H grid, align-corners false.
struct Bilinear {
  bool inside = false;
  long x0 = 0, y0 = 0;
  Scalar fx = 0, fy = 0;

  Bilinear(Scalar u, Scalar v, std::size_t width, std::size_t height) {
    if (!(u >= 0 && u <= 1 && v >= 0 && v <= 1)) return;
    inside = true;
    const Scalar x = u * Scalar(width) - Scalar(0.5);
    const Scalar y = v * Scalar(height) - Scalar(0.5);
    const Scalar xf = std::floor(x);
    const Scalar yf = std::floor(y);
    x0 = static_cast<long>(xf);
    y0 = static_cast<long>(yf);
    fx = x - xf;
    fy = y - yf;
  }
};

template <typename F>
void for_each_corner(const Bilinear& b, std::size_t width, std::size_t height, F&& f) {
  for (int dy = 0; dy < 2; ++dy) {
    const long yy = b.y0 + dy;
    if (yy < 0 || yy >= static_cast<long>(height)) continue;
    const Scalar wy = dy ? b.fy : 1 - b.fy;
    const Scalar dwy = dy ? 1 : -1;
    for (int dx = 0; dx < 2; ++dx) {
      const long xx = b.x0 + dx;
      if (xx < 0 || xx >= static_cast<long>(width)) continue;
      const Scalar wx = dx ? b.fx : 1 - b.fx;
      const Scalar dwx = dx ? 1 : -1;
      // weight, d weight / dx (pixel units), d weight / dy
      f(static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx), wx * wy,
        dwx * wy, wx * dwy);
    }
  }
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  }
  std::vector<Scalar> out(m * n, Scalar(0));
  detail::gemm_acc(false, false, m, n, k, a.data().data(), b.data().data(), out.data());
  tape.add_macs(m * k * n);
  const bool rg = needs_grad(tape, {&a, &b});
  Tensor y = make_out(tape, "matmul", {m, n}, std::move(out), rg);
  if (rg) {
    tape.record("matmul", y, [a, b, y, m, k, n]() mutable {
      const Scalar* g = y.grad().data();
      if (a.requires_grad()) detail::gemm_acc(false, true, m, k, n, g, b.data().data(), a.grad_buffer().data());
      if (b.requires_grad()) detail::gemm_acc(true, false, k, n, m, a.data().data(), g, b.grad_buffer().data());
    });
  }
  return y;
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(tape, x, w);
  if (!b.defined()) return y;
  return add_row(tape, y, b);
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<Scalar> out(a.numel());
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + B[i];
  const bool rg = needs_grad(tape, {&a, &b});
  Tensor y = make_out(tape, "add", a.shape(), std::move(out), rg);
  if (rg) {
    tape.record("add", y, [a, b, y]() mutable {
      const auto g = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return y;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<Scalar> out(a.numel());
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] - B[i];
  const bool rg = needs_grad(tape, {&a, &b});
  Tensor y = make_out(tape, "sub", a.shape(), std::move(out), rg);
  if (rg) {
    tape.record("sub", y, [a, b, y]() mutable {
      const auto g = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return y;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<Scalar> out(a.numel());
  const auto A = a.data();
  const auto B = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
  const bool rg = needs_grad(tape, {&a, &b});
  Tensor y = make_out(tape, "mul", a.shape(), std::move(out), rg);
  if (rg) {
    tape.record("mul", y, [a, b, y]() mutable {
      const auto g = y.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        const auto B = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        const auto A = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
      }
    });
  }
  return y;
}

Tensor add_row(Tape& tape, const Tensor& x, const Tensor& v) {
  require_rank("add_row", x, 2);
  if (v.numel() != x.dim(1)) {
    throw DimensionError("add_row: row vector " + shape_str(v.shape()) +
                         " does not match " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<Scalar> out(x.values());
  const auto V = v.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += V[c];
  }
  const bool rg = needs_grad(tape, {&x, &v});
  Tensor y = make_out(tape, "add_row", x.shape(), std::move(out), rg);
  if (rg) {
    tape.record("add_row", y, [x, v, y, rows, cols]() mutable {
      const auto g = y.grad();
      if (x.requires_grad()) {
        auto gx = x.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (v.requires_grad()) {
        auto gv = v.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
        }
      }
    });
  }
  return y;
}

namespace {

// Shared scaffolding for unary elementwise ops: f gives the value, df the
// derivative expressed through (input, output).
template <typename F, typename DF>
Tensor unary(Tape& tape, std::string_view op, const Tensor& x, F f, DF df) {
  std::vector<Scalar> out(x.numel());
  const auto X = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(X[i]);
  const bool rg = needs_grad(tape, {&x});
  Tensor y = make_out(tape, op, x.shape(), std::move(out), rg);
  if (rg) {
    tape.record(op, y, [x, y, df]() mutable {
      const auto g = y.grad();
      const auto X = x.data();
      const auto Y = y.data();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(X[i], Y[i]);
    });
  }
  return y;
}

}  // namespace

Tensor scale(Tape& tape, const Tensor& x, Scalar s) {
  return unary(
      tape, "scale", x, [s](Scalar v) { return v * s; },
      [s](Scalar, Scalar) { return s; });
}

Tensor add_scalar(Tape& tape, const Tensor& x, Scalar c) {
  return unary(
      tape, "add_scalar", x, [c](Scalar v) { return v + c; },
      [](Scalar, Scalar) { return Scalar(1); });
}

Tensor relu(Tape& tape, const Tensor& x) {
  return unary(
      tape, "relu", x, [](Scalar v) { return v > 0 ? v : Scalar(0); },
      [](Scalar v, Scalar) { return v > 0 ? Scalar(1) : Scalar(0); });
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  return unary(
      tape, "sigmoid", x,
      [](Scalar v) {
        if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar(1) + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Tensor abs(Tape& tape, const Tensor& x) {
  return unary(
      tape, "abs", x, [](Scalar v) { return std::abs(v); },
      [](Scalar v, Scalar) { return v > 0 ? Scalar(1) : (v < 0 ? Scalar(-1) : Scalar(0)); });
}

Tensor rsqrt(Tape& tape, const Tensor& x, Scalar eps) {
  return unary(
      tape, "rsqrt", x, [eps](Scalar v) { return Scalar(1) / std::sqrt(v + eps); },
      [](Scalar, Scalar y) { return Scalar(-0.5) * y * y * y; });
}

Tensor softmax(Tape& tape, const Tensor& x, int axis) {
  const int rank = static_cast<int>(x.ndim());
  const int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
  const std::size_t n = x.dim(static_cast<std::size_t>(ax));
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < ax; ++i) outer *= x.dim(static_cast<std::size_t>(i));
  for (int i = ax + 1; i < rank; ++i) inner *= x.dim(static_cast<std::size_t>(i));

  std::vector<Scalar> out(x.numel());
  const auto X = x.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, X[base + j * inner]);
      Scalar total = 0;
      for (std::size_t j = 0; j < n; ++j) {
        const Scalar e = std::exp(X[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= total;
    }
  }
  const bool rg = needs_grad(tape, {&x});
  Tensor y = make_out(tape, "softmax", x.shape(), std::move(out), rg);
  if (rg) {
    tape.record("softmax", y, [x, y, outer, inner, n]() mutable {
      const auto g = y.grad();
      const auto Y = y.data();
      auto gx = x.grad_buffer();
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
          const std::size_t base = o * n * inner + in;
          Scalar dot = 0;
          for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * Y[base + j * inner];
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t k = base + j * inner;
            gx[k] += Y[k] * (g[k] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Scalar eps) {
  const std::size_t d = x.shape().back();
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  std::vector<Scalar> out(x.numel());
  std::vector<Scalar> xhat(x.numel());
  std::vector<Scalar> rstd(rows);
  const auto X = x.data();
  const auto G = gain.data();
  const auto B = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* xr = X.data() + r * d;
    Scalar mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= Scalar(d);
    Scalar var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= Scalar(d);
    const Scalar rs = Scalar(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const Scalar h = (xr[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * G[j] + B[j];
    }
  }
  const bool rg = needs_grad(tape, {&x, &gain, &bias});
  Tensor y = make_out(tape, "layer_norm", x.shape(), std::move(out), rg);
  if (rg) {
    tape.record("layer_norm", y,
                [x, gain, bias, y, xhat = std::move(xhat), rstd = std::move(rstd), rows,
                 d]() mutable {
                  const auto g = y.grad();
                  const auto G = gain.data();
                  if (gain.requires_grad()) {
                    auto gg = gain.grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                    }
                  }
                  if (bias.requires_grad()) {
                    auto gb = bias.grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                    }
                  }
                  if (x.requires_grad()) {
                    auto gx = x.grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r) {
                      Scalar m1 = 0, m2 = 0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const Scalar gh = g[r * d + j] * G[j];
                        m1 += gh;
                        m2 += gh * xhat[r * d + j];
                      }
                      m1 /= Scalar(d);
                      m2 /= Scalar(d);
                      for (std::size_t j = 0; j < d; ++j) {
                        const Scalar gh = g[r * d + j] * G[j];
                        gx[r * d + j] += rstd[r] * (gh - m1 - xhat[r * d + j] * m2);
                      }
                    }
                  }
                });
  }
  return y;
}

Tensor concat(Tape& tape, const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) ok = false;
    }
    if (!ok) {
      throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " +
                           shape_str(first) + " along axis " + std::to_string(axis));
    }
    out_shape[axis] += s[axis];
  }
  const std::size_t total_axis = out_shape[axis];
  std::vector<Scalar> out(shape_numel(out_shape));
  std::size_t offset = 0;
  bool rg = false;
  for (const Tensor& p : parts) {
    const std::size_t len = p.dim(axis) * inner;
    const auto P = p.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(P.data() + o * len, len, out.data() + o * total_axis * inner + offset);
    }
    offset += len;
    rg = rg || needs_grad(tape, {&p});
  }
  Tensor y = make_out(tape, "concat", out_shape, std::move(out), rg);
  if (rg) {
    tape.record("concat", y, [parts, y, outer, inner, total_axis, axis]() mutable {
      const auto g = y.grad();
      std::size_t offset = 0;
      for (const Tensor& p : parts) {
        const std::size_t len = p.dim(axis) * inner;
        if (p.requires_grad()) {
          auto gp = p.grad_buffer();
          for (std::size_t o = 0; o < outer; ++o) {
            const Scalar* src = g.data() + o * total_axis * inner + offset;
            for (std::size_t i = 0; i < len; ++i) gp[o * len + i] += src[i];
          }
        }
        offset += len;
      }
    });
  }
  return y;
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  const bool rg = needs_grad(tape, {&x});
  Tensor y = make_out(tape, "reshape", std::move(shape), x.values(), rg);
  if (rg) {
    tape.record("reshape", y, [x, y]() mutable {
      const auto g = y.grad();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return y;
}

Tensor gather(Tape& tape, const Tensor& x, std::vector<std::size_t> index, Shape out_shape) {
  if (shape_numel(out_shape) != index.size()) {
    throw DimensionError("gather: " + std::to_string(index.size()) +
                         " indices for output shape " + shape_str(out_shape));
  }
  std::vector<Scalar> out(index.size());
  const auto X = x.data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= X.size()) {
      throw DimensionError("gather: index " + std::to_string(index[i]) +
                           " out of range for " + shape_str(x.shape()));
    }
    out[i] = X[index[i]];
  }
  const bool rg = needs_grad(tape, {&x});
  Tensor y = make_out(tape, "gather", std::move(out_shape), std::move(out), rg);
  if (rg) {
    tape.record("gather", y, [x, y, index = std::move(index)]() mutable {
      const auto g = y.grad();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += g[i];
    });
  }
  return y;
}

Tensor transpose2d(Tape& tape, const Tensor& x) {
  require_rank("transpose2d", x, 2);
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<std::size_t> idx(r * c);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < r; ++j) idx[i * r + j] = j * c + i;
  }
  return gather(tape, x, std::move(idx), {c, r});
}

Tensor take_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> rows) {
  require_rank("take_rows", x, 2);
  const std::size_t c = x.dim(1);
  std::vector<std::size_t> idx;
  idx.reserve(rows.size() * c);
  for (std::size_t r : rows) {
    if (r >= x.dim(0)) {
      throw DimensionError("take_rows: row " + std::to_string(r) + " out of range for " +
                           shape_str(x.shape()));
    }
    for (std::size_t j = 0; j < c; ++j) idx.push_back(r * c + j);
  }
  return gather(tape, x, std::move(idx), {rows.size(), c});
}

Tensor sum(Tape& tape, const Tensor& x) {
  Scalar total = 0;
  for (Scalar v : x.data()) total += v;
  const bool rg = needs_grad(tape, {&x});
  Tensor y = make_out(tape, "sum", {1}, {total}, rg);
  if (rg) {
    tape.record("sum", y, [x, y]() mutable {
      const Scalar g = y.grad()[0];
      auto gx = x.grad_buffer();
      for (Scalar& v : gx) v += g;
    });
  }
  return y;
}

Tensor mean(Tape& tape, const Tensor& x) {
  return scale(tape, sum(tape, x), Scalar(1) / Scalar(x.numel()));
}

std::size_t conv_out_size(std::size_t in, std::size_t k, std::size_t stride,
                          std::size_t padding) {
  return (in + 2 * padding - k) / stride + 1;
}

Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& kernels, const Tensor& bias,
              std::size_t stride, std::size_t padding) {
  require_rank("conv2d", x, 3);
  require_rank("conv2d", kernels, 4);
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != cin) {
    throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) +
                         " expects input channels " + std::to_string(kernels.dim(1)) +
                         ", input is " + shape_str(x.shape()));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(kernels.shape()) +
                         " larger than padded input " + shape_str(x.shape()));
  }
  if (bias.defined() && bias.numel() != cout) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " for " +
                         std::to_string(cout) + " output channels");
  }
  const std::size_t oh = conv_out_size(h, kh, stride, padding);
  const std::size_t ow = conv_out_size(w, kw, stride, padding);
  const long pad = static_cast<long>(padding);
  const long st = static_cast<long>(stride);

  const std::size_t taps = cin * kh * kw, npix = oh * ow;
  // A 1x1 kernel at stride 1 without padding reads the input as it is.
  const bool direct = kh == 1 && kw == 1 && stride == 1 && padding == 0;

  // im2col: row (ci, ky, kx), column (oy, ox); zero where the tap falls in
  // the padding.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t ci = 0; ci < cin; ++ci) {
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const std::size_t r = (ci * kh + ky) * kw + kx;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const long iy = static_cast<long>(oy) * st - pad + static_cast<long>(ky);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t ox = 0; ox < ow; ++ox) {
              const long ix = static_cast<long>(ox) * st - pad + static_cast<long>(kx);
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              fn(r * npix + oy * ow + ox, (ci * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix));
            }
          }
        }
      }
    }
  };
  std::vector<Scalar> cols;
  if (!direct) {
    cols.assign(taps * npix, Scalar(0));
    const Scalar* X = x.data().data();
    for_each_tap([&](std::size_t c, std::size_t i) { cols[c] = X[i]; });
  }
  const Scalar* C = direct ? x.data().data() : cols.data();

  std::vector<Scalar> out(cout * npix, Scalar(0));
  if (bias.defined()) {
    for (std::size_t co = 0; co < cout; ++co) std::fill_n(out.data() + co * npix, npix, bias.at(co));
  }
  detail::gemm_acc(false, false, cout, npix, taps, kernels.data().data(), C, out.data());
  tape.add_macs(cout * taps * npix);
  const bool rg = needs_grad(tape, {&x, &kernels, &bias});
  Tensor y = make_out(tape, "conv2d", {cout, oh, ow}, std::move(out), rg);
  if (rg) {
    tape.record("conv2d", y, [=, cols = std::move(cols)]() mutable {
      const Scalar* G = y.grad().data();
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.grad_buffer();
        for (std::size_t co = 0; co < cout; ++co) {
          Scalar acc = 0;
          for (std::size_t i = 0; i < npix; ++i) acc += G[co * npix + i];
          gb[co] += acc;
        }
      }
      const Scalar* C = direct ? x.data().data() : cols.data();
      if (kernels.requires_grad()) {
        detail::gemm_acc(false, true, cout, taps, npix, G, C, kernels.grad_buffer().data());
      }
      if (x.requires_grad()) {
        if (direct) {
          detail::gemm_acc(true, false, cin, npix, cout, kernels.data().data(), G, x.grad_buffer().data());
        } else {
          std::vector<Scalar> gcols(taps * npix, Scalar(0));
          detail::gemm_acc(true, false, taps, npix, cout, kernels.data().data(), G, gcols.data());
          Scalar* GX = x.grad_buffer().data();
          for_each_tap([&](std::size_t c, std::size_t i) { GX[i] += gcols[c]; });
        }
      }
    });
  }
  return y;
}

Tensor max_pool2d(Tape& tape, const Tensor& x, std::size_t kernel, std::size_t stride,
                  std::size_t padding) {
  require_rank("max_pool2d", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (kernel > h + 2 * padding || kernel > w + 2 * padding || stride == 0) {
    throw DimensionError("max_pool2d: window " + std::to_string(kernel) +
                         " does not fit " + shape_str(x.shape()));
  }
  const std::size_t oh = conv_out_size(h, kernel, stride, padding);
  const std::size_t ow = conv_out_size(w, kernel, stride, padding);
  std::vector<Scalar> out(c * oh * ow);
  std::vector<std::size_t> arg(c * oh * ow);
  const auto X = x.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        Scalar best = -std::numeric_limits<Scalar>::infinity();
        std::size_t best_i = 0;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            const std::size_t i = ch * h * w + static_cast<std::size_t>(iy) * w +
                                  static_cast<std::size_t>(ix);
            if (X[i] > best) {
              best = X[i];
              best_i = i;
            }
          }
        }
        out[(ch * oh + oy) * ow + ox] = best;
        arg[(ch * oh + oy) * ow + ox] = best_i;
      }
    }
  }
  const bool rg = needs_grad(tape, {&x});
  Tensor y = make_out(tape, "max_pool2d", {c, oh, ow}, std::move(out), rg);
  if (rg) {
    tape.record("max_pool2d", y, [x, y, arg = std::move(arg)]() mutable {
      const auto g = y.grad();
      auto gx = x.grad_buffer();
      for (std::size_t i = 0; i < arg.size(); ++i) gx[arg[i]] += g[i];
    });
  }
  return y;
}

Tensor bilinear_sample(Tape& tape, const Tensor& map, const Tensor& points) {
  require_rank("bilinear_sample", map, 3);
  if (points.ndim() != 2 || points.dim(1) != 2) {
    throw DimensionError("bilinear_sample: points must be [N,2], got " +
                         shape_str(points.shape()));
  }
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  const std::size_t n = points.dim(0);
  std::vector<Scalar> out(n * c, Scalar(0));
  const auto M = map.data();
  const auto P = points.data();
  for (std::size_t i = 0; i < n; ++i) {
    const Bilinear b(P[2 * i], P[2 * i + 1], w, h);
    if (!b.inside) continue;
    for_each_corner(b, w, h, [&](std::size_t pos, Scalar wt, Scalar, Scalar) {
      for (std::size_t ch = 0; ch < c; ++ch) out[i * c + ch] += wt * M[ch * h * w + pos];
    });
  }
  const bool rg = needs_grad(tape, {&map, &points});
  Tensor y = make_out(tape, "bilinear_sample", {n, c}, std::move(out), rg);
  if (rg) {
    tape.record("bilinear_sample", y, [map, points, y, c, h, w, n]() mutable {
      const auto g = y.grad();
      const auto M = map.data();
      const auto P = points.data();
      Scalar* GM = map.requires_grad() ? map.grad_buffer().data() : nullptr;
      Scalar* GP = points.requires_grad() ? points.grad_buffer().data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const Bilinear b(P[2 * i], P[2 * i + 1], w, h);
        if (!b.inside) continue;
        for_each_corner(b, w, h, [&](std::size_t pos, Scalar wt, Scalar dwx, Scalar dwy) {
          Scalar dot = 0;
          for (std::size_t ch = 0; ch < c; ++ch) {
            const Scalar gv = g[i * c + ch];
            if (GM) GM[ch * h * w + pos] += wt * gv;
            dot += gv * M[ch * h * w + pos];
          }
          if (GP) {
            GP[2 * i] += dot * dwx * Scalar(w);
            GP[2 * i + 1] += dot * dwy * Scalar(h);
          }
        });
      }
    });
  }
  return y;
}

Tensor deform_sample(Tape& tape, const std::vector<Tensor>& values,
                     std::span<const LevelShape> levels,
                     std::span<const std::size_t> level_of_sample, const Tensor& locations,
                     const Tensor& weights, std::span<const Scalar> sample_scale) {
  if (values.empty() || values.size() != levels.size()) {
    throw DimensionError("deform_sample: " + std::to_string(values.size()) +
                         " value maps for " + std::to_string(levels.size()) + " levels");
  }
  require_rank("deform_sample", locations, 4);
  require_rank("deform_sample", weights, 3);
  const std::size_t n = locations.dim(0), heads = locations.dim(1), s = locations.dim(2);
  if (locations.dim(3) != 2 || weights.dim(0) != n || weights.dim(1) != heads ||
      weights.dim(2) != s || level_of_sample.size() != s) {
    throw DimensionError("deform_sample: locations " + shape_str(locations.shape()) +
                         " / weights " + shape_str(weights.shape()) + " / " +
                         std::to_string(level_of_sample.size()) + " sample levels disagree");
  }
  if (!sample_scale.empty() && sample_scale.size() != n * s) {
    throw DimensionError("deform_sample: sample_scale has " +
                         std::to_string(sample_scale.size()) + " entries, expected " +
                         std::to_string(n * s));
  }
  const std::size_t d = values.front().dim(1);
  if (d % heads != 0) {
    throw DimensionError("deform_sample: channel count " + std::to_string(d) +
                         " not divisible by " + std::to_string(heads) + " heads");
  }
  for (std::size_t l = 0; l < values.size(); ++l) {
    if (values[l].ndim() != 2 || values[l].dim(1) != d ||
        values[l].dim(0) != levels[l].height * levels[l].width) {
      throw DimensionError("deform_sample: value map " + std::to_string(l) + " has shape " +
                           shape_str(values[l].shape()));
    }
  }
  for (std::size_t lv : level_of_sample) {
    if (lv >= values.size()) throw DimensionError("deform_sample: sample level out of range");
  }
  const std::size_t dh = d / heads;
  std::vector<Scalar> out(n * d, Scalar(0));
  const auto L = locations.data();
  const auto W = weights.data();
  std::uint64_t active = 0;
  for (std::size_t q = 0; q < n; ++q) {
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Scalar* o = out.data() + q * d + hd * dh;
      for (std::size_t k = 0; k < s; ++k) {
        const Scalar sc = sample_scale.empty() ? Scalar(1) : sample_scale[q * s + k];
        if (sc == 0) continue;
        ++active;
        const std::size_t lvl = level_of_sample[k];
        const std::size_t li = (q * heads + hd) * s + k;
        const Bilinear b(L[2 * li], L[2 * li + 1], levels[lvl].width, levels[lvl].height);
        if (!b.inside) continue;
        const Scalar wt = W[li] * sc;
        const Scalar* V = values[lvl].data().data();
        for_each_corner(b, levels[lvl].width, levels[lvl].height,
                        [&](std::size_t pos, Scalar cw, Scalar, Scalar) {
                          const Scalar f = wt * cw;
                          const Scalar* vrow = V + pos * d + hd * dh;
                          for (std::size_t ch = 0; ch < dh; ++ch) o[ch] += f * vrow[ch];
                        });
      }
    }
  }
  tape.add_macs(active * 4 * dh);
  bool rg = needs_grad(tape, {&locations, &weights});
  for (const Tensor& v : values) rg = rg || needs_grad(tape, {&v});
  Tensor y = make_out(tape, "deform_sample", {n, d}, std::move(out), rg);
  if (rg) {
    std::vector<LevelShape> lv(levels.begin(), levels.end());
    std::vector<std::size_t> los(level_of_sample.begin(), level_of_sample.end());
    std::vector<Scalar> scl(sample_scale.begin(), sample_scale.end());
    tape.record("deform_sample", y,
                [values, locations, weights, y, lv = std::move(lv), los = std::move(los),
                 scl = std::move(scl), n, heads, s, d, dh]() mutable {
                  const auto g = y.grad();
                  const auto L = locations.data();
                  const auto W = weights.data();
                  Scalar* GL = locations.requires_grad() ? locations.grad_buffer().data() : nullptr;
                  Scalar* GW = weights.requires_grad() ? weights.grad_buffer().data() : nullptr;
                  std::vector<Scalar*> GV(values.size(), nullptr);
                  for (std::size_t l = 0; l < values.size(); ++l) {
                    if (values[l].requires_grad()) GV[l] = values[l].grad_buffer().data();
                  }
                  for (std::size_t q = 0; q < n; ++q) {
                    for (std::size_t hd = 0; hd < heads; ++hd) {
                      const Scalar* go = g.data() + q * d + hd * dh;
                      for (std::size_t k = 0; k < s; ++k) {
                        const Scalar sc = scl.empty() ? Scalar(1) : scl[q * s + k];
                        if (sc == 0) continue;
                        const std::size_t lvl = los[k];
                        const std::size_t li = (q * heads + hd) * s + k;
                        const LevelShape& shp = lv[lvl];
                        const Bilinear b(L[2 * li], L[2 * li + 1], shp.width, shp.height);
                        if (!b.inside) continue;
                        const Scalar wt = W[li] * sc;
                        const Scalar* V = values[lvl].data().data();
                        Scalar* gv = GV[lvl];
                        Scalar dot_w = 0, dot_x = 0, dot_y = 0;
                        for_each_corner(b, shp.width, shp.height,
                                        [&](std::size_t pos, Scalar cw, Scalar dwx, Scalar dwy) {
                                          const Scalar* vrow = V + pos * d + hd * dh;
                                          Scalar dot = 0;
                                          for (std::size_t ch = 0; ch < dh; ++ch) {
                                            dot += go[ch] * vrow[ch];
                                          }
                                          if (gv) {
                                            Scalar* grow = gv + pos * d + hd * dh;
                                            const Scalar f = wt * cw;
                                            for (std::size_t ch = 0; ch < dh; ++ch) {
                                              grow[ch] += f * go[ch];
                                            }
                                          }
                                          dot_w += cw * dot;
                                          dot_x += dwx * dot;
                                          dot_y += dwy * dot;
                                        });
                        if (GW) GW[li] += sc * dot_w;
                        if (GL) {
                          GL[2 * li] += wt * dot_x * Scalar(shp.width);
                          GL[2 * li + 1] += wt * dot_y * Scalar(shp.height);
                        }
                      }
                    }
                  }
                });
  }
  return y;
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> targets,
                     std::span<const Scalar> class_weights) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n || class_weights.size() != c) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(class_weights.size()) +
                         " class weights for logits " + shape_str(logits.shape()));
  }
  std::vector<Scalar> prob(n * c);
  const auto X = logits.data();
  Scalar num = 0, den = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= c) {
      throw ValueError("cross_entropy: target " + std::to_string(t) + " out of range");
    }
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, X[i * c + j]);
    Scalar total = 0;
    for (std::size_t j = 0; j < c; ++j) {
      prob[i * c + j] = std::exp(X[i * c + j] - mx);
      total += prob[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] /= total;
    const Scalar w = class_weights[static_cast<std::size_t>(t)];
    num += w * -(X[i * c + static_cast<std::size_t>(t)] - mx - std::log(total));
    den += w;
  }
  if (den <= 0) throw ValueError("cross_entropy: total target weight is zero");
  const bool rg = needs_grad(tape, {&logits});
  Tensor y = make_out(tape, "cross_entropy", {1}, {num / den}, rg);
  if (rg) {
    std::vector<int> tg(targets.begin(), targets.end());
    std::vector<Scalar> cw(class_weights.begin(), class_weights.end());
    tape.record("cross_entropy", y,
                [logits, y, prob = std::move(prob), tg = std::move(tg), cw = std::move(cw), n, c,
                 den]() mutable {
                  const Scalar g = y.grad()[0];
                  auto gx = logits.grad_buffer();
                  for (std::size_t i = 0; i < n; ++i) {
                    const std::size_t t = static_cast<std::size_t>(tg[i]);
                    const Scalar f = g * cw[t] / den;
                    for (std::size_t j = 0; j < c; ++j) {
                      gx[i * c + j] += f * (prob[i * c + j] - (j == t ? Scalar(1) : Scalar(0)));
                    }
                  }
                });
  }
  return y;
}

}  // namespace lsn::ops
