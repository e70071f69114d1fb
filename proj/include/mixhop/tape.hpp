#pragma once

// Reverse-mode differentiation over the closed set of operations a MixHop
// model needs: dense products, sparse propagation, column concatenation,
// elementwise activation, dropout, the output-layer group mix, and masked
// softmax cross-entropy.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "mixhop/dense_matrix.hpp"
#include "mixhop/rng.hpp"
#include "mixhop/sparse_adjacency.hpp"

namespace mixhop {

enum class Activation { relu, identity };

std::string_view to_string(Activation kind) noexcept;
Activation parse_activation(std::string_view name);

/// Class id per node; negative means "no label".
using Labels = std::vector<int>;

// Stateless forward helpers, also used outside the tape.

DenseMatrix apply_activation(const DenseMatrix& m, Activation kind);
/// Row-wise softmax.
DenseMatrix softmax_rows(const DenseMatrix& logits);

struct LossAndGradient {
  double loss = 0.0;
  DenseMatrix gradient;  // same shape as the logits
};

/// Mean over `mask` of -log softmax(logits[i])[labels[i]]. Rows outside the
/// mask get exactly zero gradient. Throws DataError if a masked node has no
/// label, ConfigError on an empty mask or fewer than two classes.
LossAndGradient masked_softmax_xent(const DenseMatrix& logits, std::span<const int> labels,
                                    std::span<const NodeId> mask);

/// Handle to a value recorded on a Tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

/// Records forward values and replays their gradients in reverse order.
/// A tape belongs to one training step of one run; it is not thread safe.
class Tape {
 public:
  enum class OpKind {
    constant,
    parameter,
    matmul,
    spmm,
    concat,
    slice,
    activation,
    dropout,
    group_mix,
    softmax_xent
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  /// Input that needs no gradient. The tape keeps its own copy.
  Var constant(DenseMatrix value);
  /// Input that needs no gradient, referenced in place; must outlive the tape.
  Var constant_ref(const DenseMatrix& value);
  /// Trainable input; its gradient is available after backward().
  Var parameter(DenseMatrix value);

  Var matmul(Var a, Var b);
  /// adjacency * h. The adjacency must outlive the tape.
  Var spmm(const SparseAdjacency& adjacency, Var h);
  Var concat_columns(std::span<const Var> parts);
  /// Columns [begin, end) of m.
  Var slice_columns(Var m, std::size_t begin, std::size_t end);
  Var activation(Var m, Activation kind);
  /// Inverted dropout. In eval mode (or at rate 0) returns `m` itself.
  Var dropout(Var m, double rate, Rng& rng, bool training);
  /// Output-layer mix: softmax(logits)-weighted sum of the contiguous
  /// `classes`-wide column groups of h. `logits` is 1 x (h.cols / classes).
  Var group_mix(Var h, Var logits, std::size_t classes);
  /// 1x1 loss node for masked_softmax_xent.
  Var softmax_xent(Var logits, std::span<const int> labels, std::span<const NodeId> mask);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  /// `loss` must be a 1x1 node.
  void backward(Var loss);

  const DenseMatrix& value(Var v) const;
  /// Accumulated gradient; a zero matrix of matching shape when nothing flowed.
  const DenseMatrix& grad(Var v) const;

  std::size_t size() const noexcept { return nodes_.size(); }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  /// Node ids in the order the last backward() visited them.
  const std::vector<std::size_t>& backward_visit_order() const noexcept { return visit_order_; }

 private:
  struct Node {
    OpKind kind = OpKind::constant;
    DenseMatrix owned;
    const DenseMatrix* external = nullptr;
    mutable DenseMatrix gradient;
    bool requires_grad = false;
    std::function<void(Tape&, const DenseMatrix&)> backward;

    const DenseMatrix& value() const { return external != nullptr ? *external : owned; }
  };

  Var push(OpKind kind, DenseMatrix value, bool requires_grad,
           std::function<void(Tape&, const DenseMatrix&)> backward);
  const Node& node(Var v) const;
  bool needs_grad(Var v) const { return node(v).requires_grad; }
  void accumulate(Var v, DenseMatrix g);

  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

}  // namespace mixhop
