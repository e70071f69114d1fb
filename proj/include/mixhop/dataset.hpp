#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "mixhop/dense_matrix.hpp"
#include "mixhop/rng.hpp"
#include "mixhop/sparse_adjacency.hpp"
#include "mixhop/tape.hpp"

namespace mixhop {

struct Splits {
  std::vector<NodeId> train;
  std::vector<NodeId> valid;
  std::vector<NodeId> test;

  friend bool operator==(const Splits&, const Splits&) = default;
};

/// Graph, node features, labels and a train/valid/test partition.
///
/// Holds the binary adjacency and its renormalised form side by side; both
/// are computed once so the object can be shared read-only across runs.
class Dataset {
 public:
  Dataset() = default;
  /// Validates every invariant; throws DataError on violation.
  Dataset(SparseAdjacency adjacency, DenseMatrix features, Labels labels, std::size_t num_classes,
          Splits splits);

  const SparseAdjacency& adjacency() const noexcept { return adjacency_; }
  /// D^-1/2 (A + I) D^-1/2.
  const SparseAdjacency& normalized_adjacency() const noexcept { return normalized_; }
  const DenseMatrix& features() const noexcept { return features_; }
  const Labels& labels() const noexcept { return labels_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  const Splits& splits() const noexcept { return splits_; }
  std::size_t num_nodes() const noexcept { return adjacency_.n(); }

  Dataset with_splits(Splits splits) const;
  Dataset with_features(DenseMatrix features) const;

 private:
  SparseAdjacency adjacency_;
  SparseAdjacency normalized_;
  DenseMatrix features_;
  Labels labels_;
  std::size_t num_classes_ = 0;
  Splits splits_;
};

/// Throws DataError if the splits overlap or reference a node outside [0, n).
void validate_splits(const Splits& splits, std::size_t n);

/// Reads edges.tsv, features.tsv, labels.tsv and splits.json from `dir`.
///
/// Errors: IoError for a missing file, ParseError (with line number) for a
/// malformed line, DataError for inconsistent counts or indices.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes the four canonical files. Floats are printed with 17 significant
/// digits so a reload is exact.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// `per_class` uniformly sampled training nodes per class, `valid_size`
/// validation nodes from the remainder, everything else is test.
Splits make_random_splits(const Dataset& dataset, std::size_t per_class, std::size_t valid_size,
                          Rng& rng);

/// Random partition of all nodes into three equal-size parts (the last part
/// takes the remainder), used for the synthetic graphs.
Splits make_equal_splits(std::size_t n, Rng& rng);

/// Fraction of undirected edges whose endpoints share a label.
/// Throws UndefinedStatistic on an edgeless graph.
double measure_homophily(const SparseAdjacency& adjacency, const Labels& labels);
double measure_homophily(const Dataset& dataset);

/// Feature preprocessing applied before training.
enum class FeatureNorm { none, row, standardize };

FeatureNorm parse_feature_norm(std::string_view name);
std::string_view to_string(FeatureNorm norm) noexcept;

/// `row` rescales each row to sum 1 (rows summing to 0 are left alone);
/// `standardize` gives every column zero mean and unit variance.
DenseMatrix normalize_features(const DenseMatrix& features, FeatureNorm norm);

}  // namespace mixhop
