#include "mixhop/sparse_adjacency.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mixhop/errors.hpp"

namespace mixhop {

SparseAdjacency SparseAdjacency::from_edge_list(std::span<const Edge> edges, NodeId n) {
  if (n <= 0) throw ConfigError("adjacency needs a positive node count, got " + std::to_string(n));
  const auto count = static_cast<std::size_t>(n);

  std::vector<std::vector<std::size_t>> adj(count);
  for (const auto& [src, dst] : edges) {
    if (src < 0 || src >= n || dst < 0 || dst >= n) {
      throw DataError("edge (" + std::to_string(src) + ", " + std::to_string(dst) +
                      ") references a node outside [0, " + std::to_string(n) + ")");
    }
    if (src == dst) continue;
    adj[static_cast<std::size_t>(src)].push_back(static_cast<std::size_t>(dst));
    adj[static_cast<std::size_t>(dst)].push_back(static_cast<std::size_t>(src));
  }

  SparseAdjacency out;
  out.n_ = count;
  out.offsets_.assign(1, 0);
  out.offsets_.reserve(count + 1);
  for (auto& row : adj) {
    std::sort(row.begin(), row.end());
    row.erase(std::unique(row.begin(), row.end()), row.end());
    out.columns_.insert(out.columns_.end(), row.begin(), row.end());
    out.offsets_.push_back(out.columns_.size());
  }
  out.values_.assign(out.columns_.size(), 1.0);
  return out;
}

SparseAdjacency SparseAdjacency::renormalize() const {
  if (normalized_) throw ContractError("renormalize: adjacency is already normalized");

  // Self-loop-augmented degree.
  std::vector<double> degree(n_);
  for (std::size_t i = 0; i < n_; ++i) {
    double d = 1.0;
    for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e) d += values_[e];
    degree[i] = d;
  }

  SparseAdjacency out;
  out.n_ = n_;
  out.normalized_ = true;
  out.offsets_.assign(1, 0);
  out.offsets_.reserve(n_ + 1);
  out.columns_.reserve(columns_.size() + n_);
  out.values_.reserve(columns_.size() + n_);
  for (std::size_t i = 0; i < n_; ++i) {
    bool diagonal_done = false;
    auto emit_diagonal = [&] {
      out.columns_.push_back(i);
      out.values_.push_back(1.0 / degree[i]);
      diagonal_done = true;
    };
    for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e) {
      const std::size_t j = columns_[e];
      if (!diagonal_done && j > i) emit_diagonal();
      out.columns_.push_back(j);
      // d_i * d_j commutes, so (i, j) and (j, i) get bit-identical values.
      out.values_.push_back(values_[e] / std::sqrt(degree[i] * degree[j]));
    }
    if (!diagonal_done) emit_diagonal();
    out.offsets_.push_back(out.columns_.size());
  }
  return out;
}

std::size_t SparseAdjacency::undirected_edge_count() const noexcept {
  std::size_t off_diagonal = 0;
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e)
      if (columns_[e] != i) ++off_diagonal;
  return off_diagonal / 2;
}

std::size_t SparseAdjacency::degree(std::size_t i) const noexcept {
  std::size_t d = 0;
  for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e)
    if (columns_[e] != i) ++d;
  return d;
}

double SparseAdjacency::value(std::size_t i, std::size_t j) const noexcept {
  const auto row = neighbours(i);
  const auto it = std::lower_bound(row.begin(), row.end(), j);
  if (it == row.end() || *it != j) return 0.0;
  return values_[offsets_[i] + static_cast<std::size_t>(it - row.begin())];
}

std::vector<Edge> SparseAdjacency::edge_list() const {
  std::vector<Edge> edges;
  edges.reserve(undirected_edge_count());
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e)
      if (columns_[e] > i)
        edges.emplace_back(static_cast<NodeId>(i), static_cast<NodeId>(columns_[e]));
  return edges;
}

DenseMatrix SparseAdjacency::to_dense() const {
  DenseMatrix out(n_, n_);
  for (std::size_t i = 0; i < n_; ++i)
    for (std::size_t e = offsets_[i]; e < offsets_[i + 1]; ++e) out(i, columns_[e]) = values_[e];
  return out;
}

DenseMatrix spmm(const SparseAdjacency& a, const DenseMatrix& h) {
  return kernels::spmm(a.view(), h);
}

std::map<int, DenseMatrix> propagate_powers(const SparseAdjacency& a, const DenseMatrix& h,
                                            std::span<const int> powers,
                                            std::size_t* multiplies) {
  int max_power = 0;
  for (int j : powers) {
    if (j < 0) throw ConfigError("propagate_powers: negative power " + std::to_string(j));
    max_power = std::max(max_power, j);
  }
  if (a.n() != h.rows()) {
    throw DimensionError("propagate_powers: adjacency has " + std::to_string(a.n()) +
                         " nodes but features are " + h.shape_string());
  }
  auto wanted = [&](int j) { return std::find(powers.begin(), powers.end(), j) != powers.end(); };

  std::map<int, DenseMatrix> out;
  if (wanted(0)) out.emplace(0, h);
  DenseMatrix current = h;
  for (int j = 1; j <= max_power; ++j) {
    current = spmm(a, current);
    if (multiplies != nullptr) ++*multiplies;
    if (wanted(j)) out.emplace(j, current);
  }
  return out;
}

}  // namespace mixhop
