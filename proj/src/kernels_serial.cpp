#include "mixhop/kernels.hpp"

namespace mixhop::kernels::serial {

void gemm(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  const std::size_t inner = a.cols();
  const std::size_t width = b.cols();
  out.fill(0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* dst = out.data() + i * width;
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
  const std::size_t width = b.cols();
  out.fill(0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.data() + i * a.cols();
    const double* brow = b.data() + i * width;
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      double* dst = out.data() + k * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += aik * brow[j];
    }
  }
}

void gemm_nt(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  gemm(a, b.transposed(), out);
}

void spmm(const CsrView& s, const DenseMatrix& h, DenseMatrix& out) {
  const std::size_t width = h.cols();
  out.fill(0.0);
  for (std::size_t i = 0; i < s.n; ++i) {
    double* dst = out.data() + i * width;
    for (std::size_t e = s.offsets[i]; e < s.offsets[i + 1]; ++e) {
      const double v = s.values[e];
      const double* src = h.data() + s.columns[e] * width;
      for (std::size_t j = 0; j < width; ++j) dst[j] += v * src[j];
    }
  }
}

}  // namespace mixhop::kernels::serial
