#pragma once

// Homophily-controlled synthetic graphs.
//
// Nodes arrive one at a time and attach to existing nodes by preferential
// attachment, reweighted by label agreement: a same-class candidate u has
// weight deg(u) * h, a different-class candidate deg(u) * (1 - h) * w(d),
// where d is the distance between the two classes on a circle of k classes
// and w halves with every step of distance. Features are 2-D Gaussians whose
// means sit on a circle of radius 300, one angle per class.
//
// Note on the cross-class factor: writing it as deg(u) * h * w(d) (h on both
// branches) would make h cancel under normalisation. The (1 - h) form is what
// makes the measured edge homophily track h.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "mixhop/dataset.hpp"
#include "mixhop/rng.hpp"

namespace mixhop::synth {

struct FeatureParams {
  double radius = 300.0;
  double covariance_scale = 3500.0;
  double covariance_diag[2] = {7.0, 2.0};
};

struct SynthConfig {
  std::size_t nodes = 5000;
  std::size_t classes = 10;
  double homophily = 0.5;
  std::size_t edges_per_node = 6;
  std::uint64_t seed = 1;
  FeatureParams features;

  /// Throws ConfigError unless k >= 2, n >= k, m_a >= 1, n > m_a and h in [0, 1].
  void validate() const;
};

/// Shortest distance between classes a and b on a circle of k classes.
std::size_t class_distance(std::size_t a, std::size_t b, std::size_t k);

/// Attachment weight per class distance.
class DistanceWeights {
 public:
  explicit DistanceWeights(std::size_t k);

  std::size_t classes() const noexcept { return k_; }
  std::size_t max_distance() const noexcept { return raw_.size() - 1; }
  /// Unnormalised weight 2^(d_max - d); index 0 is unused.
  double raw(std::size_t d) const { return raw_.at(d); }
  /// Normalised so that summing over the k-1 other classes of any class gives 1.
  double weight(std::size_t d) const { return normalized_.at(d); }
  /// Normalised weight between two classes (0 for the same class).
  double between(std::size_t a, std::size_t b) const;

 private:
  std::size_t k_;
  std::vector<double> raw_;
  std::vector<double> normalized_;
};

struct GeneratedGraph {
  SparseAdjacency adjacency;
  Labels labels;
  /// Draws where every candidate had weight 0 and plain degree-proportional
  /// sampling was used instead.
  std::size_t fallback_draws = 0;
};

/// Runs the attachment process. Deterministic for a given config.
GeneratedGraph generate_graph(const SynthConfig& cfg);

/// n x 2 features: class t ~ N(mu_t, R(t) diag R(t)^T) with mu_t on the circle.
DenseMatrix sample_features(const Labels& labels, std::size_t k, Rng& rng,
                            const FeatureParams& params = {});

/// Mean and covariance of the feature distribution of one class.
struct ClassGaussian {
  double mean[2];
  double cov[2][2];
};
ClassGaussian class_gaussian(std::size_t cls, std::size_t k, const FeatureParams& params = {});

struct SyntheticDataset {
  Dataset dataset;
  std::size_t fallback_draws = 0;
  double measured_homophily = 0.0;
};

/// Graph, features and a random equal three-way split.
SyntheticDataset generate_dataset(const SynthConfig& cfg);

/// Writes the canonical dataset files plus metadata.json.
void write_dataset(const SyntheticDataset& synthetic, const SynthConfig& cfg,
                   const std::filesystem::path& dir);

}  // namespace mixhop::synth
