#include "mixhop/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mixhop/errors.hpp"
#include "mixhop/kernels.hpp"

namespace mixhop {

std::string_view to_string(Activation kind) noexcept {
  return kind == Activation::relu ? "relu" : "identity";
}

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "identity" || name == "linear") return Activation::identity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

DenseMatrix apply_activation(const DenseMatrix& m, Activation kind) {
  if (kind == Activation::identity) return m;
  DenseMatrix out = m;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

DenseMatrix softmax_rows(const DenseMatrix& logits) {
  DenseMatrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    auto dst = out.row(r);
    const double peak = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - peak);
      total += dst[c];
    }
    for (double& v : dst) v /= total;
  }
  return out;
}

LossAndGradient masked_softmax_xent(const DenseMatrix& logits, std::span<const int> labels,
                                    std::span<const NodeId> mask) {
  if (logits.cols() < 2) {
    throw ConfigError("softmax cross-entropy needs at least 2 classes, got " +
                      std::to_string(logits.cols()));
  }
  if (mask.empty()) throw ConfigError("softmax cross-entropy over an empty mask");
  if (labels.size() != logits.rows()) {
    throw DimensionError("label count " + std::to_string(labels.size()) +
                         " does not match logits " + logits.shape_string());
  }

  LossAndGradient out{0.0, DenseMatrix(logits.rows(), logits.cols())};
  const double weight = 1.0 / static_cast<double>(mask.size());
  for (const NodeId node : mask) {
    if (node < 0 || static_cast<std::size_t>(node) >= logits.rows()) {
      throw DataError("mask index " + std::to_string(node) + " outside [0, " +
                      std::to_string(logits.rows()) + ")");
    }
    const auto i = static_cast<std::size_t>(node);
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= logits.cols()) {
      throw DataError("node " + std::to_string(node) + " is in the loss mask but has no label");
    }
    const auto row = logits.row(i);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - peak);
    const double log_norm = peak + std::log(total);
    out.loss += weight * (log_norm - row[static_cast<std::size_t>(label)]);

    auto g = out.gradient.row(i);
    for (std::size_t c = 0; c < row.size(); ++c) g[c] += weight * std::exp(row[c] - log_norm);
    g[static_cast<std::size_t>(label)] -= weight;
  }
  return out;
}

Var Tape::push(OpKind kind, DenseMatrix value, bool requires_grad,
               std::function<void(Tape&, const DenseMatrix&)> backward) {
  Node n;
  n.kind = kind;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw ContractError("variable does not belong to this tape");
  return nodes_[v.id];
}

void Tape::accumulate(Var v, DenseMatrix g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!n.gradient.same_shape(n.value())) {
    n.gradient = std::move(g);
  } else {
    n.gradient += g;
  }
}

Var Tape::constant(DenseMatrix value) { return push(OpKind::constant, std::move(value), false, {}); }

Var Tape::constant_ref(const DenseMatrix& value) {
  Var v = push(OpKind::constant, DenseMatrix{}, false, {});
  nodes_[v.id].external = &value;
  return v;
}

Var Tape::parameter(DenseMatrix value) {
  Node n;
  n.kind = OpKind::parameter;
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::matmul(Var a, Var b) {
  DenseMatrix out = kernels::matmul(value(a), value(b));
  const bool rg = needs_grad(a) || needs_grad(b);
  return push(OpKind::matmul, std::move(out), rg, [a, b](Tape& t, const DenseMatrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, kernels::matmul_nt(g, t.value(b)));
    if (t.needs_grad(b)) t.accumulate(b, kernels::matmul_tn(t.value(a), g));
  });
}

Var Tape::spmm(const SparseAdjacency& adjacency, Var h) {
  DenseMatrix out = mixhop::spmm(adjacency, value(h));
  const SparseAdjacency* adj = &adjacency;
  return push(OpKind::spmm, std::move(out), needs_grad(h), [adj, h](Tape& t, const DenseMatrix& g) {
    // The adjacency is symmetric, so its transpose is itself.
    t.accumulate(h, mixhop::spmm(*adj, g));
  });
}

Var Tape::concat_columns(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_columns: no parts");
  const std::size_t rows = value(parts.front()).rows();
  std::size_t cols = 0;
  bool rg = false;
  for (Var p : parts) {
    const DenseMatrix& m = value(p);
    if (m.rows() != rows) {
      throw DimensionError("concat_columns: row count " + std::to_string(m.rows()) +
                           " does not match " + std::to_string(rows));
    }
    cols += m.cols();
    rg = rg || needs_grad(p);
  }
  DenseMatrix out(rows, cols);
  std::size_t offset = 0;
  for (Var p : parts) {
    const DenseMatrix& m = value(p);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto src = m.row(r);
      std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += m.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return push(OpKind::concat, std::move(out), rg,
              [inputs = std::move(inputs)](Tape& t, const DenseMatrix& g) {
                std::size_t begin = 0;
                for (Var p : inputs) {
                  const std::size_t width = t.value(p).cols();
                  if (t.needs_grad(p)) t.accumulate(p, g.slice_columns(begin, begin + width));
                  begin += width;
                }
              });
}

Var Tape::slice_columns(Var m, std::size_t begin, std::size_t end) {
  DenseMatrix out = value(m).slice_columns(begin, end);
  return push(OpKind::slice, std::move(out), needs_grad(m),
              [m, begin, end](Tape& t, const DenseMatrix& g) {
                const DenseMatrix& src = t.value(m);
                DenseMatrix full(src.rows(), src.cols());
                for (std::size_t r = 0; r < src.rows(); ++r)
                  for (std::size_t c = begin; c < end; ++c) full(r, c) = g(r, c - begin);
                t.accumulate(m, std::move(full));
              });
}

Var Tape::activation(Var m, Activation kind) {
  DenseMatrix out = apply_activation(value(m), kind);
  return push(OpKind::activation, std::move(out), needs_grad(m),
              [m, kind](Tape& t, const DenseMatrix& g) {
                if (kind == Activation::identity) {
                  t.accumulate(m, g);
                  return;
                }
                DenseMatrix masked = g;
                const auto in = t.value(m).values();
                auto gv = masked.values();
                for (std::size_t i = 0; i < gv.size(); ++i)
                  if (!(in[i] > 0.0)) gv[i] = 0.0;
                t.accumulate(m, std::move(masked));
              });
}

Var Tape::dropout(Var m, double rate, Rng& rng, bool training) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return m;

  const DenseMatrix& in = value(m);
  const double scale = 1.0 / (1.0 - rate);
  const bool rg = needs_grad(m);
  DenseMatrix out(in.rows(), in.cols());
  // Per-entry multiplier: 0 or 1/(1-rate).
  DenseMatrix factor = rg ? DenseMatrix(in.rows(), in.cols()) : DenseMatrix{};
  const auto iv = in.values();
  auto ov = out.values();
  for (std::size_t i = 0; i < iv.size(); ++i) {
    // A zero input stays zero whatever the draw; skip it when no gradient
    // needs the mask.
    if (!rg && iv[i] == 0.0) continue;
    const double f = rng.bernoulli(rate) ? 0.0 : scale;
    ov[i] = iv[i] * f;
    if (rg) factor.values()[i] = f;
  }
  return push(OpKind::dropout, std::move(out), rg,
              [m, factor = std::move(factor)](Tape& t, const DenseMatrix& g) {
                DenseMatrix masked = g;
                auto gv = masked.values();
                const auto fv = factor.values();
                for (std::size_t i = 0; i < gv.size(); ++i) gv[i] *= fv[i];
                t.accumulate(m, std::move(masked));
              });
}

Var Tape::group_mix(Var h, Var logits, std::size_t classes) {
  const DenseMatrix& hv = value(h);
  const DenseMatrix& lv = value(logits);
  if (classes == 0 || hv.cols() % classes != 0) {
    throw ConfigError("output layer width " + std::to_string(hv.cols()) +
                      " is not divisible by the class count " + std::to_string(classes));
  }
  const std::size_t groups = hv.cols() / classes;
  if (lv.rows() != 1 || lv.cols() != groups) {
    throw DimensionError("group_mix: expected 1x" + std::to_string(groups) + " logits, got " +
                         lv.shape_string());
  }
  const DenseMatrix q = softmax_rows(lv);
  DenseMatrix out(hv.rows(), classes);
  for (std::size_t r = 0; r < hv.rows(); ++r) {
    const auto src = hv.row(r);
    auto dst = out.row(r);
    for (std::size_t k = 0; k < groups; ++k) {
      const double qk = q(0, k);
      for (std::size_t c = 0; c < classes; ++c) dst[c] += qk * src[k * classes + c];
    }
  }
  const bool rg = needs_grad(h) || needs_grad(logits);
  return push(OpKind::group_mix, std::move(out), rg,
              [h, logits, classes, groups, q](Tape& t, const DenseMatrix& g) {
                const DenseMatrix& hv = t.value(h);
                if (t.needs_grad(h)) {
                  DenseMatrix gh(hv.rows(), hv.cols());
                  for (std::size_t r = 0; r < hv.rows(); ++r)
                    for (std::size_t k = 0; k < groups; ++k)
                      for (std::size_t c = 0; c < classes; ++c)
                        gh(r, k * classes + c) = q(0, k) * g(r, c);
                  t.accumulate(h, std::move(gh));
                }
                if (t.needs_grad(logits)) {
                  std::vector<double> dq(groups, 0.0);
                  for (std::size_t r = 0; r < hv.rows(); ++r)
                    for (std::size_t k = 0; k < groups; ++k)
                      for (std::size_t c = 0; c < classes; ++c)
                        dq[k] += g(r, c) * hv(r, k * classes + c);
                  double mean = 0.0;
                  for (std::size_t k = 0; k < groups; ++k) mean += q(0, k) * dq[k];
                  DenseMatrix gl(1, groups);
                  for (std::size_t k = 0; k < groups; ++k) gl(0, k) = q(0, k) * (dq[k] - mean);
                  t.accumulate(logits, std::move(gl));
                }
              });
}

Var Tape::softmax_xent(Var logits, std::span<const int> labels, std::span<const NodeId> mask) {
  LossAndGradient lg = masked_softmax_xent(value(logits), labels, mask);
  DenseMatrix out(1, 1, lg.loss);
  return push(OpKind::softmax_xent, std::move(out), needs_grad(logits),
              [logits, local = std::move(lg.gradient)](Tape& t, const DenseMatrix& g) {
                t.accumulate(logits, g(0, 0) * local);
              });
}

void Tape::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value().rows() != 1 || root.value().cols() != 1) {
    throw ContractError("backward() needs a 1x1 loss, got " + root.value().shape_string());
  }
  for (Node& n : nodes_) n.gradient = DenseMatrix{};
  visit_order_.clear();
  if (!root.requires_grad) return;
  nodes_[loss.id].gradient = DenseMatrix(1, 1, 1.0);

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward) continue;
    visit_order_.push_back(id);
    if (!n.gradient.same_shape(n.value())) continue;
    // Inputs always have smaller ids, so this node's gradient is final here.
    n.backward(*this, n.gradient);
  }
}

const DenseMatrix& Tape::value(Var v) const { return node(v).value(); }

const DenseMatrix& Tape::grad(Var v) const {
  const Node& n = node(v);
  if (!n.gradient.same_shape(n.value())) {
    n.gradient = DenseMatrix(n.value().rows(), n.value().cols());
  }
  return n.gradient;
}

}  // namespace mixhop
