#include "gemm.hpp"

#include <Eigen/Core>

namespace scca::nk::detail {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstView = Eigen::Map<const RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;
using View = Eigen::Map<RowMat, Eigen::Unaligned, Eigen::OuterStride<>>;

}  // namespace

void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
              std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc) {
  if (m == 0 || n == 0 || k == 0) return;
  const auto M = static_cast<Eigen::Index>(m), N = static_cast<Eigen::Index>(n), K = static_cast<Eigen::Index>(k);
  ConstView A(a, trans_a ? K : M, trans_a ? M : K, Eigen::OuterStride<>(static_cast<Eigen::Index>(lda)));
  ConstView B(b, trans_b ? N : K, trans_b ? K : N, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldb)));
  View C(c, M, N, Eigen::OuterStride<>(static_cast<Eigen::Index>(ldc)));
  if (!trans_a && !trans_b) C.noalias() += A * B;
  else if (trans_a && !trans_b) C.noalias() += A.transpose() * B;
  else if (!trans_a && trans_b) C.noalias() += A * B.transpose();
  else C.noalias() += A.transpose() * B.transpose();
}

}  // namespace scca::nk::detail
