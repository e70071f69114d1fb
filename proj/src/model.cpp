#include "mixhop/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mixhop/errors.hpp"
#include "mixhop/kernels.hpp"

namespace mixhop {

std::size_t LayerSpec::width() const noexcept {
  return std::accumulate(widths.begin(), widths.end(), std::size_t{0});
}

std::size_t LayerSpec::power_index(int power) const {
  const auto it = std::find(powers.begin(), powers.end(), power);
  if (it == powers.end()) throw ConfigError("layer has no power " + std::to_string(power));
  return static_cast<std::size_t>(it - powers.begin());
}

void ModelSpec::validate() const {
  if (input_width == 0) throw ConfigError("model input width must be positive");
  if (num_classes == 0) throw ConfigError("model needs at least one class");
  if (layers.empty()) throw ConfigError("model needs at least one layer");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& layer = layers[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    if (layer.powers.empty()) throw ConfigError(where + "empty power set");
    if (layer.powers.size() != layer.widths.size()) {
      throw ConfigError(where + "powers and widths differ in length");
    }
    for (std::size_t p = 0; p < layer.powers.size(); ++p) {
      if (layer.powers[p] < 0) throw ConfigError(where + "negative power");
      if (p > 0 && layer.powers[p] <= layer.powers[p - 1]) {
        throw ConfigError(where + "powers must be strictly ascending");
      }
    }
    if (layer.width() == 0) throw ConfigError(where + "all powers have zero width");
  }
  if (output_width() % num_classes != 0) {
    throw ConfigError("final layer width " + std::to_string(output_width()) +
                      " is not divisible by the class count " + std::to_string(num_classes));
  }
  if (shared_first_layer) {
    const auto& w = layers.front().widths;
    if (std::adjacent_find(w.begin(), w.end(), std::not_equal_to<>()) != w.end()) {
      throw ConfigError("a shared first layer needs equal widths for every power");
    }
  }
}

std::size_t ModelSpec::layer_input_width(std::size_t layer) const {
  return layer == 0 ? input_width : layers.at(layer - 1).width();
}

std::size_t ModelSpec::weight_count() const {
  std::size_t total = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::size_t rows = layer_input_width(i);
    if (i == 0 && shared_first_layer) {
      total += rows * layers[0].widths.front();
    } else {
      total += rows * layers[i].width();
    }
  }
  return total;
}

std::vector<std::size_t> split_width(std::size_t total, std::size_t count) {
  if (count == 0) throw ConfigError("cannot split a width over zero powers");
  std::vector<std::size_t> out(count, total / count);
  for (std::size_t i = 0; i < total % count; ++i) ++out[i];
  return out;
}

LayerSpec uniform_layer(std::span<const int> powers, std::size_t width_per_power,
                        Activation activation) {
  LayerSpec layer;
  layer.powers.assign(powers.begin(), powers.end());
  layer.widths.assign(powers.size(), width_per_power);
  layer.activation = activation;
  return layer;
}

ModelSpec make_mixhop_spec(std::size_t input_width, std::size_t num_classes,
                           std::span<const int> powers, std::size_t hidden, std::size_t depth) {
  if (depth < 1) throw ConfigError("depth must be at least 1");
  ModelSpec spec;
  spec.input_width = input_width;
  spec.num_classes = num_classes;
  std::vector<int> sorted(powers.begin(), powers.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (std::size_t i = 0; i + 1 < depth; ++i) {
    LayerSpec layer;
    layer.powers = sorted;
    layer.widths = split_width(hidden, sorted.size());
    layer.activation = Activation::relu;
    spec.layers.push_back(std::move(layer));
  }
  spec.layers.push_back(uniform_layer(sorted, num_classes, Activation::identity));
  spec.validate();
  return spec;
}

const DenseMatrix& ModelParams::weight(std::size_t layer, std::size_t power_index) const {
  const auto& layer_weights = weights.at(layer);
  return layer_weights.size() == 1 ? layer_weights.front() : layer_weights.at(power_index);
}

void ModelParams::check_shapes(const ModelSpec& spec) const {
  if (weights.size() != spec.layers.size()) {
    throw DimensionError("params have " + std::to_string(weights.size()) + " layers, spec has " +
                         std::to_string(spec.layers.size()));
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const bool shared = i == 0 && spec.shared_first_layer;
    const std::size_t expected = shared ? 1 : layer.powers.size();
    if (weights[i].size() != expected) {
      throw DimensionError("layer " + std::to_string(i) + " holds " +
                           std::to_string(weights[i].size()) + " matrices, expected " +
                           std::to_string(expected));
    }
    for (std::size_t p = 0; p < weights[i].size(); ++p) {
      const DenseMatrix& w = weights[i][p];
      if (w.rows() != spec.layer_input_width(i) || w.cols() != layer.widths[p]) {
        throw DimensionError("layer " + std::to_string(i) + " power " +
                             std::to_string(layer.powers[p]) + " weight is " + w.shape_string() +
                             ", expected " + std::to_string(spec.layer_input_width(i)) + "x" +
                             std::to_string(layer.widths[p]));
      }
    }
  }
  if (output_logits.rows() != 1 || output_logits.cols() != spec.output_groups()) {
    throw DimensionError("output logits are " + output_logits.shape_string() + ", expected 1x" +
                         std::to_string(spec.output_groups()));
  }
}

ColumnNorms weight_column_norms(const ModelParams& params) {
  ColumnNorms out(params.weights.size());
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    for (const DenseMatrix& w : params.weights[i]) {
      std::vector<double> norms(w.cols(), 0.0);
      for (std::size_t r = 0; r < w.rows(); ++r)
        for (std::size_t c = 0; c < w.cols(); ++c) norms[c] += w(r, c) * w(r, c);
      for (double& v : norms) v = std::sqrt(v);
      out[i].push_back(std::move(norms));
    }
  }
  return out;
}

ModelParams init_params(const ModelSpec& spec, Rng& rng) {
  spec.validate();
  ModelParams params;
  params.weights.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    const std::size_t rows = spec.layer_input_width(i);
    const std::size_t count = (i == 0 && spec.shared_first_layer) ? 1 : layer.powers.size();
    for (std::size_t p = 0; p < count; ++p) {
      const std::size_t cols = layer.widths[p];
      DenseMatrix w(rows, cols);
      if (rows + cols > 0) {
        const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
        for (double& v : w.values()) v = rng.uniform(-bound, bound);
      }
      params.weights[i].push_back(std::move(w));
    }
  }
  params.output_logits = DenseMatrix(1, spec.output_groups());
  return params;
}

namespace {

bool project_first(const LayerSpec& spec, std::size_t input_width, PropagationOrder order) {
  switch (order) {
    case PropagationOrder::propagate_first:
      return false;
    case PropagationOrder::project_first:
      return true;
    case PropagationOrder::automatic:
      break;
  }
  // Values pushed through the adjacency: max(P) * s_in when propagating the
  // input, sum_j j * w_j when propagating each projection.
  std::size_t projected = 0;
  for (std::size_t p = 0; p < spec.powers.size(); ++p)
    projected += static_cast<std::size_t>(spec.powers[p]) * spec.widths[p];
  return projected < static_cast<std::size_t>(spec.max_power()) * input_width;
}

}  // namespace

Var vanilla_gc_layer(Tape& tape, Var h, const SparseAdjacency& a, Var w, Activation activation,
                     PropagationOrder order) {
  LayerSpec single;
  single.powers = {1};
  single.widths = {tape.value(w).cols()};
  single.activation = activation;
  Var pre;
  if (project_first(single, tape.value(h).cols(), order)) {
    pre = tape.spmm(a, tape.matmul(h, w));
  } else {
    pre = tape.matmul(tape.spmm(a, h), w);
  }
  return tape.activation(pre, activation);
}

Var mixhop_gc_layer(Tape& tape, Var h, const SparseAdjacency& a, const LayerSpec& spec,
                    std::span<const Var> weights, PropagationOrder order) {
  if (weights.size() != 1 && weights.size() != spec.powers.size()) {
    throw DimensionError("mixhop layer: " + std::to_string(weights.size()) +
                         " weight matrices for " + std::to_string(spec.powers.size()) + " powers");
  }
  if (!a.normalized()) throw ContractError("mixhop layer expects a normalized adjacency");
  auto weight_for = [&](std::size_t p) { return weights.size() == 1 ? weights[0] : weights[p]; };
  for (std::size_t p = 0; p < spec.powers.size(); ++p) {
    const DenseMatrix& w = tape.value(weight_for(p));
    if (w.rows() != tape.value(h).cols() || w.cols() != spec.widths[p]) {
      throw DimensionError("mixhop layer: power " + std::to_string(spec.powers[p]) + " weight is " +
                           w.shape_string() + ", input is " + tape.value(h).shape_string() +
                           " and width " + std::to_string(spec.widths[p]));
    }
  }

  std::vector<Var> blocks;
  if (project_first(spec, tape.value(h).cols(), order)) {
    // One product H [W_j1 | W_j2 | ...] (or H W for a shared matrix), then
    // each block is propagated j times.
    std::vector<Var> live;
    std::vector<std::size_t> live_index;
    for (std::size_t p = 0; p < spec.powers.size(); ++p) {
      if (spec.widths[p] == 0) continue;
      live_index.push_back(p);
      if (weights.size() > 1) live.push_back(weights[p]);
    }
    if (weights.size() == 1) {
      Var current = tape.matmul(h, weights[0]);
      int reached = 0;
      for (std::size_t p : live_index) {
        while (reached < spec.powers[p]) {
          current = tape.spmm(a, current);
          ++reached;
        }
        blocks.push_back(tape.activation(current, spec.activation));
      }
    } else {
      Var projected = tape.matmul(h, live.size() == 1 ? live[0] : tape.concat_columns(live));
      std::size_t begin = 0;
      for (std::size_t p : live_index) {
        Var b = live.size() == 1 ? projected
                                 : tape.slice_columns(projected, begin, begin + spec.widths[p]);
        begin += spec.widths[p];
        for (int step = 0; step < spec.powers[p]; ++step) b = tape.spmm(a, b);
        blocks.push_back(tape.activation(b, spec.activation));
      }
    }
  } else {
    // Right-to-left: one pass of B := A B up to max(P), projecting on the way.
    Var current = h;
    int reached = 0;
    for (std::size_t p = 0; p < spec.powers.size(); ++p) {
      while (reached < spec.powers[p]) {
        current = tape.spmm(a, current);
        ++reached;
      }
      if (spec.widths[p] == 0) continue;
      blocks.push_back(tape.activation(tape.matmul(current, weight_for(p)), spec.activation));
    }
  }
  return tape.concat_columns(blocks);
}

ForwardVars record_forward(Tape& tape, const ModelSpec& spec, const ModelParams& params,
                           const SparseAdjacency& a, const DenseMatrix& features, Rng& rng,
                           const ForwardOptions& options) {
  spec.validate();
  params.check_shapes(spec);
  if (features.cols() != spec.input_width) {
    throw DimensionError("features are " + features.shape_string() + " but the model expects " +
                         std::to_string(spec.input_width) + " input columns");
  }

  ForwardVars vars;
  vars.weights.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    for (const DenseMatrix& w : params.weights[i]) vars.weights[i].push_back(tape.parameter(w));
  vars.output_logits = tape.parameter(params.output_logits);

  Var h = tape.dropout(tape.constant_ref(features), options.dropout_rate, rng, options.training);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (i > 0) h = tape.dropout(h, options.dropout_rate, rng, options.training);
    h = mixhop_gc_layer(tape, h, a, spec.layers[i], vars.weights[i], options.order);
    vars.layer_outputs.push_back(h);
  }
  vars.mixed = tape.group_mix(h, vars.output_logits, spec.num_classes);
  return vars;
}

DenseMatrix vanilla_gc_forward(const DenseMatrix& h, const SparseAdjacency& a,
                               const DenseMatrix& w, Activation activation) {
  if (!a.normalized()) throw ContractError("vanilla GC layer expects a normalized adjacency");
  Tape tape;
  Var out = vanilla_gc_layer(tape, tape.constant_ref(h), a, tape.constant_ref(w), activation);
  return tape.value(out);
}

DenseMatrix mixhop_gc_forward(const DenseMatrix& h, const SparseAdjacency& a,
                              const LayerSpec& spec, std::span<const DenseMatrix> weights) {
  Tape tape;
  std::vector<Var> ws;
  for (const DenseMatrix& w : weights) ws.push_back(tape.constant_ref(w));
  Var out = mixhop_gc_layer(tape, tape.constant_ref(h), a, spec, ws);
  return tape.value(out);
}

DenseMatrix output_layer_forward(const DenseMatrix& h, const DenseMatrix& logits,
                                 std::size_t classes) {
  Tape tape;
  Var mixed = tape.group_mix(tape.constant_ref(h), tape.constant_ref(logits), classes);
  return softmax_rows(tape.value(mixed));
}

ModelOutputs model_forward(const ModelSpec& spec, const ModelParams& params,
                           const SparseAdjacency& a, const DenseMatrix& features,
                           PropagationOrder order) {
  Tape tape;
  Rng unused(0);
  const ForwardVars vars =
      record_forward(tape, spec, params, a, features, unused, {false, 0.0, order});
  ModelOutputs out;
  for (Var v : vars.layer_outputs) out.layer_outputs.push_back(tape.value(v));
  out.probabilities = softmax_rows(tape.value(vars.mixed));
  return out;
}

ConstructedModel construct_delta_weights(std::size_t input_width, Activation activation) {
  const std::size_t s = input_width;
  const std::vector<int> powers{0, 1, 2};
  ConstructedModel m;
  m.spec.input_width = s;
  m.spec.num_classes = s;
  m.spec.layers = {uniform_layer(powers, s, activation),
                   uniform_layer(powers, s, Activation::identity)};
  m.spec.validate();

  const DenseMatrix eye = DenseMatrix::identity(s);
  m.params.weights.resize(2);
  m.params.weights[0] = {DenseMatrix(s, s), eye, eye};
  // Layer 2 reads [0 | sigma(AX) | sigma(A^2 X)] and emits the difference of
  // the last two blocks through its zeroth power.
  DenseMatrix stacked(3 * s, s);
  for (std::size_t i = 0; i < s; ++i) {
    stacked(s + i, i) = 1.0;
    stacked(2 * s + i, i) = -1.0;
  }
  m.params.weights[1] = {stacked, DenseMatrix(3 * s, s), DenseMatrix(3 * s, s)};
  m.params.output_logits = DenseMatrix(1, m.spec.output_groups());
  return m;
}

ConstructedModel construct_mixing_weights(std::span<const double> alphas, std::size_t input_width,
                                          Activation activation) {
  if (alphas.empty()) throw ConfigError("mixing construction needs at least one coefficient");
  const std::size_t s = input_width;
  const std::size_t terms = alphas.size();
  std::vector<int> powers(terms);
  std::iota(powers.begin(), powers.end(), 0);

  ConstructedModel m;
  m.spec.input_width = s;
  m.spec.num_classes = s;
  m.spec.layers = {uniform_layer(powers, s, activation),
                   uniform_layer(powers, s, Activation::identity)};
  m.spec.validate();

  m.params.weights.resize(2);
  m.params.weights[0].assign(terms, DenseMatrix::identity(s));
  DenseMatrix stacked(terms * s, s);
  for (std::size_t j = 0; j < terms; ++j)
    for (std::size_t i = 0; i < s; ++i) stacked(j * s + i, i) = alphas[j];
  m.params.weights[1].assign(terms, DenseMatrix(terms * s, s));
  m.params.weights[1][0] = std::move(stacked);
  m.params.output_logits = DenseMatrix(1, m.spec.output_groups());
  return m;
}

}  // namespace mixhop
