#include "mixhop/dense_matrix.hpp"

#include <algorithm>
#include <cmath>

#include "mixhop/errors.hpp"

namespace mixhop {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw DimensionError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return {r, c, std::move(data)};
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

DenseMatrix DenseMatrix::slice_columns(std::size_t begin, std::size_t end) const {
  if (begin > end || end > cols_) {
    throw DimensionError("column slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string());
  }
  DenseMatrix out(rows_, end - begin);
  for (std::size_t r = 0; r < rows_; ++r) {
    std::copy(data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + begin),
              data_.begin() + static_cast<std::ptrdiff_t>(r * cols_ + end),
              out.data_.begin() + static_cast<std::ptrdiff_t>(r * out.cols_));
  }
  return out;
}

DenseMatrix DenseMatrix::slice_rows(std::size_t begin, std::size_t end) const {
  if (begin > end || end > rows_) {
    throw DimensionError("row slice [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") out of range for " + shape_string());
  }
  std::vector<double> data(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                           data_.begin() + static_cast<std::ptrdiff_t>(end * cols_));
  return {end - begin, cols_, std::move(data)};
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix out(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
  return out;
}

bool DenseMatrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void DenseMatrix::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

std::string DenseMatrix::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

namespace {

void require_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

}  // namespace

double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) worst = std::max(worst, std::abs(av[i] - bv[i]));
  return worst;
}

DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
  DenseMatrix out = a;
  out += b;
  return out;
}

DenseMatrix operator-(const DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "subtract");
  DenseMatrix out = a;
  auto ov = out.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] -= bv[i];
  return out;
}

DenseMatrix operator*(double s, const DenseMatrix& a) {
  DenseMatrix out = a;
  for (double& v : out.values()) v *= s;
  return out;
}

DenseMatrix& operator+=(DenseMatrix& a, const DenseMatrix& b) {
  require_same_shape(a, b, "add");
  auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < av.size(); ++i) av[i] += bv[i];
  return a;
}

}  // namespace mixhop
