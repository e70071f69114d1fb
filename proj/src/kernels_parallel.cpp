#include <atomic>
#include <cstdlib>
#include <string>

#include "mixhop/errors.hpp"
#include "mixhop/kernels.hpp"

#ifdef MIXHOP_HAVE_OPENMP
#include <omp.h>
#endif

namespace mixhop::kernels {

namespace {

int threads_from_env() noexcept {
  const char* raw = std::getenv("MIXHOP_THREADS");
  if (raw == nullptr) return 1;
  const int n = std::atoi(raw);
  return n > 0 ? n : 1;
}

std::atomic<int>& thread_setting() noexcept {
  static std::atomic<int> value{threads_from_env()};
  return value;
}

// Signed loop index for OpenMP 2.x style worksharing.
using Index = long long;

}  // namespace

bool openmp_available() noexcept {
#ifdef MIXHOP_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

int thread_count() noexcept { return thread_setting().load(std::memory_order_relaxed); }

void set_thread_count(int n) noexcept {
  thread_setting().store(n > 0 ? n : 1, std::memory_order_relaxed);
}

namespace parallel {

// Each output row is owned by exactly one thread and accumulated in the same
// order as the serial reference.

void gemm(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  const std::size_t inner = a.cols();
  const std::size_t width = b.cols();
  const Index rows = static_cast<Index>(a.rows());
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (Index ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* dst = out.data() + i * width;
    for (std::size_t j = 0; j < width; ++j) dst[j] = 0.0;
    const double* arow = a.data() + i * inner;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = b.data() + k * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += aik * brow[j];
    }
  }
}

void gemm_tn(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  const DenseMatrix at = a.transposed();
  gemm(at, b, out);
}

void gemm_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  gemm(a, b.transposed(), out);
}

void spmm(const CsrView& s, const DenseMatrix& h, DenseMatrix& out) {
  const std::size_t width = h.cols();
  const Index rows = static_cast<Index>(s.n);
#pragma omp parallel for schedule(static) num_threads(thread_count())
  for (Index ii = 0; ii < rows; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* dst = out.data() + i * width;
    for (std::size_t j = 0; j < width; ++j) dst[j] = 0.0;
    for (std::size_t e = s.offsets[i]; e < s.offsets[i + 1]; ++e) {
      const double v = s.values[e];
      const double* src = h.data() + s.columns[e] * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += v * src[j];
    }
  }
}

}  // namespace parallel

namespace {

bool use_parallel() noexcept { return openmp_available() && thread_count() > 1; }

}  // namespace

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + a.shape_string() + " by " +
                         b.shape_string());
  }
  DenseMatrix out(a.rows(), b.cols());
  use_parallel() ? parallel::gemm(a, b, out) : serial::gemm(a, b, out);
  return out;
}

DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: cannot multiply transpose of " + a.shape_string() + " by " +
                         b.shape_string());
  }
  DenseMatrix out(a.cols(), b.cols());
  use_parallel() ? parallel::gemm_tn(a, b, out) : serial::gemm_tn(a, b, out);
  return out;
}

DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: cannot multiply " + a.shape_string() + " by transpose of " +
                         b.shape_string());
  }
  DenseMatrix out(a.rows(), b.rows());
  use_parallel() ? parallel::gemm_nt(a, b, out) : serial::gemm_nt(a, b, out);
  return out;
}

DenseMatrix spmm(const CsrView& s, const DenseMatrix& h) {
  if (s.n != h.rows()) {
    throw DimensionError("spmm: adjacency is " + std::to_string(s.n) + "x" + std::to_string(s.n) +
                         " but features are " + h.shape_string());
  }
  DenseMatrix out(h.rows(), h.cols());
  use_parallel() ? parallel::spmm(s, h, out) : serial::spmm(s, h, out);
  return out;
}

}  // namespace mixhop::kernels
