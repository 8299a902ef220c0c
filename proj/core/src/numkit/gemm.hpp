#pragma once

#include <cstddef>

namespace scca::nk::detail {

// C[m, n] += op(A) * op(B) on row-major buffers with the given leading
// dimensions; op transposes when the flag is set.
void gemm_acc(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
              std::size_t lda, const double* b, std::size_t ldb, double* c, std::size_t ldc);

}  // namespace scca::nk::detail
