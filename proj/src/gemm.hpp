#pragma once

// Dense row-major matrix products used by matmul and conv2d.

#include <cstddef>

#include "lsn/tensor.hpp"

namespace lsn::detail {

/// C[m, n] += op(A) op(B), with op(A) of shape [m, k] and op(B) of [k, n].
/// A transposed operand is stored in its untransposed row-major layout.
void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const Scalar* a,
              const Scalar* b, Scalar* c);

}  // namespace lsn::detail
