#pragma once

// Dense and sparse product kernels.
//
// Every kernel exists twice: a serial reference in `kernels::serial` and an
// OpenMP variant in `kernels::parallel`. Both accumulate each output element
// in the same order, so they agree bitwise for any thread count. The free
// functions at namespace scope dispatch on `thread_count()`.

#include <cstddef>
#include <span>

#include "mixhop/dense_matrix.hpp"

namespace mixhop::kernels {

/// Non-owning compressed-row view of a square sparse matrix.
struct CsrView {
  std::size_t n = 0;
  std::span<const std::size_t> offsets;  // n + 1 entries
  std::span<const std::size_t> columns;
  std::span<const double> values;
};

namespace serial {
/// out = a * b. Zero entries of `a` are skipped, which is exact for finite inputs.
void gemm(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out);
/// out = a^T * b.
void gemm_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out);
/// out = a * b^T.
void gemm_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out);
/// out = s * h.
void spmm(const CsrView& s, const DenseMatrix& h, DenseMatrix& out);
}  // namespace serial

namespace parallel {
void gemm(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out);
void gemm_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out);
void gemm_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out);
void spmm(const CsrView& s, const DenseMatrix& h, DenseMatrix& out);
}  // namespace parallel

/// True when the OpenMP variants were compiled in.
bool openmp_available() noexcept;

/// Worker count used by the dispatching kernels. Initialised from the
/// MIXHOP_THREADS environment variable (default 1).
int thread_count() noexcept;
void set_thread_count(int n) noexcept;

// Shape-checked, allocating entry points. Throw DimensionError on mismatch.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b);
DenseMatrix spmm(const CsrView& s, const DenseMatrix& h);

}  // namespace mixhop::kernels
