#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "mixhop/dense_matrix.hpp"
#include "mixhop/kernels.hpp"

namespace mixhop {

using NodeId = std::int64_t;
using Edge = std::pair<NodeId, NodeId>;

/// Symmetric sparse adjacency in compressed-row form.
///
/// Built from an edge list as a binary matrix A (no self loops), then turned
/// into D^-1/2 (A + I) D^-1/2 by renormalize(). Immutable after construction.
class SparseAdjacency {
 public:
  SparseAdjacency() = default;

  /// Symmetrised, deduplicated binary adjacency. Self loops are dropped.
  static SparseAdjacency from_edge_list(std::span<const Edge> edges, NodeId n);

  /// Adds self loops and applies symmetric degree normalisation.
  /// Throws ContractError if already normalized.
  SparseAdjacency renormalize() const;

  std::size_t n() const noexcept { return n_; }
  std::size_t nnz() const noexcept { return columns_.size(); }
  bool normalized() const noexcept { return normalized_; }

  /// Number of undirected off-diagonal edges.
  std::size_t undirected_edge_count() const noexcept;
  /// Number of stored off-diagonal neighbours of node i.
  std::size_t degree(std::size_t i) const noexcept;

  std::span<const std::size_t> offsets() const noexcept { return offsets_; }
  std::span<const std::size_t> columns() const noexcept { return columns_; }
  std::span<const double> values() const noexcept { return values_; }
  std::span<const std::size_t> neighbours(std::size_t i) const noexcept {
    return {columns_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  /// Stored value at (i, j), or 0 when absent.
  double value(std::size_t i, std::size_t j) const noexcept;

  /// Each undirected edge once, as (i, j) with i < j.
  std::vector<Edge> edge_list() const;

  kernels::CsrView view() const noexcept { return {n_, offsets_, columns_, values_}; }
  DenseMatrix to_dense() const;

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> columns_;
  std::vector<double> values_;
  bool normalized_ = false;
};

/// a * h. Throws DimensionError when a.n() != h.rows().
DenseMatrix spmm(const SparseAdjacency& a, const DenseMatrix& h);

/// {j: a^j h} for every j in `powers`, by repeated right-to-left products.
/// Performs exactly max(powers) sparse multiplies; when `multiplies` is given
/// the count is added to it. Throws ConfigError on a negative power.
std::map<int, DenseMatrix> propagate_powers(const SparseAdjacency& a, const DenseMatrix& h,
                                            std::span<const int> powers,
                                            std::size_t* multiplies = nullptr);

}  // namespace mixhop
