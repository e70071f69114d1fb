#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "mixhop/dense_matrix.hpp"
#include "mixhop/rng.hpp"
#include "mixhop/sparse_adjacency.hpp"
#include "mixhop/tape.hpp"

namespace mixhop {

/// One graph-convolution layer: a set of adjacency powers, each with its own
/// output width. A width of 0 means the power has been pruned away.
struct LayerSpec {
  std::vector<int> powers;          // strictly ascending, non-negative
  std::vector<std::size_t> widths;  // parallel to `powers`
  Activation activation = Activation::relu;

  std::size_t width() const noexcept;
  std::size_t power_index(int power) const;  // throws ConfigError if absent
  int max_power() const noexcept { return powers.empty() ? 0 : powers.back(); }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A stack of MixHop layers followed by the group-mixing softmax output.
struct ModelSpec {
  std::size_t input_width = 0;
  std::size_t num_classes = 0;
  std::vector<LayerSpec> layers;
  /// Tie the first layer's weight matrix across all of its powers.
  bool shared_first_layer = false;

  /// Throws ConfigError on an invalid spec.
  void validate() const;
  std::size_t layer_input_width(std::size_t layer) const;
  std::size_t output_width() const { return layers.back().width(); }
  std::size_t output_groups() const { return output_width() / num_classes; }
  /// Number of weight-matrix entries (output logits excluded).
  std::size_t weight_count() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Splits `total` columns over `count` powers, remainder to the lowest powers
/// (61 over 3 gives 21/20/20).
std::vector<std::size_t> split_width(std::size_t total, std::size_t count);

/// Standard architecture: `depth - 1` hidden MixHop layers of total width
/// `hidden` split over `powers` with ReLU, then a final MixHop layer with `c`
/// columns per power and identity activation feeding the output mix.
ModelSpec make_mixhop_spec(std::size_t input_width, std::size_t num_classes,
                           std::span<const int> powers, std::size_t hidden, std::size_t depth = 2);

/// A layer with the same width for every power.
LayerSpec uniform_layer(std::span<const int> powers, std::size_t width_per_power,
                        Activation activation);

struct ModelParams {
  /// weights[layer][power index]; a shared first layer stores a single matrix.
  std::vector<std::vector<DenseMatrix>> weights;
  /// 1 x output_groups; softmax of it gives the group weights q.
  DenseMatrix output_logits;

  const DenseMatrix& weight(std::size_t layer, std::size_t power_index) const;
  /// Throws DimensionError if any shape disagrees with `spec`.
  void check_shapes(const ModelSpec& spec) const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Euclidean norm of every column of every weight matrix, indexed like
/// ModelParams::weights: [layer][matrix][column].
using ColumnNorms = std::vector<std::vector<std::vector<double>>>;
ColumnNorms weight_column_norms(const ModelParams& params);

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), output logits zero.
ModelParams init_params(const ModelSpec& spec, Rng& rng);

/// Order in which A^j H W_j is evaluated.
///
/// propagate_first computes A^j H once for all powers and multiplies each by
/// W_j; project_first computes H W_j and propagates it j times. They are
/// equal up to rounding. automatic picks whichever moves fewer values.
enum class PropagationOrder { automatic, propagate_first, project_first };

// Tape-level building blocks.

/// sigma(A H W).
Var vanilla_gc_layer(Tape& tape, Var h, const SparseAdjacency& a, Var w, Activation activation,
                     PropagationOrder order = PropagationOrder::automatic);

/// ||_{j in P} sigma(A^j H W_j), ascending j; zero-width powers add no columns.
/// `weights` is parallel to spec.powers (a single entry is reused for all).
Var mixhop_gc_layer(Tape& tape, Var h, const SparseAdjacency& a, const LayerSpec& spec,
                    std::span<const Var> weights,
                    PropagationOrder order = PropagationOrder::automatic);

/// Every intermediate of one model evaluation.
struct ForwardVars {
  std::vector<std::vector<Var>> weights;
  Var output_logits;
  /// Post-activation output of each layer; back() is the pre-output activation.
  std::vector<Var> layer_outputs;
  /// Mixed logits before the final softmax.
  Var mixed;
};

struct ForwardOptions {
  bool training = false;
  double dropout_rate = 0.0;
  PropagationOrder order = PropagationOrder::automatic;
};

/// dropout(X) -> layer 1 -> dropout -> ... -> layer l -> output mix.
/// `a` must be normalized and `features` must outlive the tape.
ForwardVars record_forward(Tape& tape, const ModelSpec& spec, const ModelParams& params,
                           const SparseAdjacency& a, const DenseMatrix& features, Rng& rng,
                           const ForwardOptions& options = {});

// Value-level convenience wrappers (eval mode).

DenseMatrix vanilla_gc_forward(const DenseMatrix& h, const SparseAdjacency& a,
                               const DenseMatrix& w, Activation activation);
DenseMatrix mixhop_gc_forward(const DenseMatrix& h, const SparseAdjacency& a,
                              const LayerSpec& spec, std::span<const DenseMatrix> weights);
/// row-softmax(sum_k softmax(logits)_k * H[:, kc:(k+1)c]).
DenseMatrix output_layer_forward(const DenseMatrix& h, const DenseMatrix& logits,
                                 std::size_t classes);

struct ModelOutputs {
  std::vector<DenseMatrix> layer_outputs;
  DenseMatrix probabilities;  // n x c, rows sum to 1
};

/// Eval-mode forward pass.
ModelOutputs model_forward(const ModelSpec& spec, const ModelParams& params,
                           const SparseAdjacency& a, const DenseMatrix& features,
                           PropagationOrder order = PropagationOrder::automatic);

struct ConstructedModel {
  ModelSpec spec;
  ModelParams params;
};

/// Two layers over P = {0, 1, 2} whose pre-output activation holds
/// sigma(A X) - sigma(A^2 X) in its first s0 columns.
ConstructedModel construct_delta_weights(std::size_t input_width,
                                         Activation activation = Activation::relu);

/// Two layers over P = {0..m} whose pre-output activation holds
/// sum_j alpha_j sigma(A^j X) in its first s0 columns, m = alphas.size() - 1.
ConstructedModel construct_mixing_weights(std::span<const double> alphas, std::size_t input_width,
                                          Activation activation = Activation::relu);

/// Checkpoint layout: `checkpoint.json` (spec and shapes) plus one flat
/// little-endian float64 file per tensor, named by its key
/// ("layer{i}/power{j}.f64", "output/logits.f64").
void save_checkpoint(const ModelSpec& spec, const ModelParams& params,
                     const std::filesystem::path& dir);
ConstructedModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace mixhop
