#include "gemm.hpp"

#include <Eigen/Core>

namespace lsn::detail {
namespace {

using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Mat>;

}  // namespace

void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const Scalar* a,
              const Scalar* b, Scalar* c) {
  if (m == 0 || n == 0 || k == 0) return;
  const auto em = static_cast<Eigen::Index>(m), en = static_cast<Eigen::Index>(n),
             ek = static_cast<Eigen::Index>(k);
  Eigen::Map<Mat> C(c, em, en);
  const ConstMap A = trans_a ? ConstMap(a, ek, em) : ConstMap(a, em, ek);
  const ConstMap B = trans_b ? ConstMap(b, en, ek) : ConstMap(b, ek, en);
  if (trans_a && trans_b) {
    C.noalias() += A.transpose() * B.transpose();
  } else if (trans_a) {
    C.noalias() += A.transpose() * B;
  } else if (trans_b) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() += A * B;
  }
}

}  // namespace lsn::detail
