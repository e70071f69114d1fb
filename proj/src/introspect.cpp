#include "mixhop/introspect.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <string>
#include <tuple>

#include "mixhop/errors.hpp"
#include "mixhop/json_io.hpp"

namespace mixhop {

using Survivors = std::vector<std::vector<std::vector<std::size_t>>>;

nlohmann::json ColumnNormReport::to_json() const { return norms; }

ColumnNormReport ColumnNormReport::from_json(const nlohmann::json& doc) {
  try {
    return {doc.get<ColumnNorms>()};
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed column-norm report: ") + e.what());
  }
}

ColumnNormReport column_norms(const ModelParams& params) { return {weight_column_norms(params)}; }

nlohmann::json ShrinkPlan::to_json() const {
  nlohmann::json widths = nlohmann::json::array();
  for (const LayerSpec& layer : spec.layers) widths.push_back(layer.widths);
  return {{"threshold", threshold}, {"survivors", survivors}, {"widths", widths}};
}

std::size_t surviving_weight_count(const ModelSpec& spec, const Survivors& kept) {
  std::size_t total = 0;
  std::size_t rows = spec.input_width;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    std::size_t cols = 0;
    for (const auto& s : kept[i]) cols += s.size();
    total += rows * cols;
    rows = cols;
  }
  return total;
}

namespace {

void check_report(const ModelSpec& spec, const ColumnNormReport& report) {
  if (spec.shared_first_layer) throw ContractError("cannot prune a shared first layer");
  if (report.norms.size() != spec.layers.size()) {
    throw DimensionError("norm report has " + std::to_string(report.norms.size()) +
                         " layers, spec has " + std::to_string(spec.layers.size()));
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (report.norms[i].size() != layer.powers.size()) {
      throw DimensionError("norm report layer " + std::to_string(i) + " has " +
                           std::to_string(report.norms[i].size()) + " matrices");
    }
    for (std::size_t p = 0; p < layer.powers.size(); ++p) {
      if (report.norms[i][p].size() != layer.widths[p]) {
        throw DimensionError("norm report layer " + std::to_string(i) + " power " +
                             std::to_string(layer.powers[p]) + " has " +
                             std::to_string(report.norms[i][p].size()) + " columns, spec has " +
                             std::to_string(layer.widths[p]));
      }
    }
  }
}

Survivors select(const ModelSpec& spec, const ColumnNormReport& report, double threshold) {
  Survivors kept(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    kept[i].resize(spec.layers[i].powers.size());
    for (std::size_t p = 0; p < kept[i].size(); ++p) {
      const auto& norms = report.norms[i][p];
      for (std::size_t c = 0; c < norms.size(); ++c)
        if (norms[c] > threshold) kept[i][p].push_back(c);
    }
  }

  // Round the final layer down to a multiple of the class count.
  auto& last = kept.back();
  const auto& last_norms = report.norms.back();
  std::vector<std::tuple<double, std::size_t, std::size_t>> ranked;
  for (std::size_t p = 0; p < last.size(); ++p)
    for (std::size_t c : last[p]) ranked.emplace_back(last_norms[p][c], p, c);
  std::size_t excess = ranked.size() % spec.num_classes;
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) < std::get<0>(b);
    return std::tie(std::get<1>(a), std::get<2>(a)) > std::tie(std::get<1>(b), std::get<2>(b));
  });
  for (std::size_t k = 0; k < excess; ++k) {
    auto& cols = last[std::get<1>(ranked[k])];
    cols.erase(std::find(cols.begin(), cols.end(), std::get<2>(ranked[k])));
  }
  return kept;
}

bool usable(const Survivors& kept) {
  for (const auto& layer : kept) {
    std::size_t width = 0;
    for (const auto& s : layer) width += s.size();
    if (width == 0) return false;
  }
  return true;
}

ModelSpec spec_for(const ModelSpec& spec, const Survivors& kept) {
  ModelSpec out = spec;
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t p = 0; p < kept[i].size(); ++p) out.layers[i].widths[p] = kept[i][p].size();
  return out;
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// Removes output column `drop` of layer `layer` (index within the layer's
// concatenated output), first adding its downstream rows into row `into`.
void fold_column(ModelSpec& spec, ModelParams& params, std::size_t layer, std::size_t p,
                 std::size_t local_drop, std::size_t global_drop, std::size_t global_into) {
  DenseMatrix& w = params.weights[layer][p];
  std::vector<std::size_t> cols;
  for (std::size_t c = 0; c < w.cols(); ++c)
    if (c != local_drop) cols.push_back(c);
  DenseMatrix narrowed(w.rows(), cols.size());
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t k = 0; k < cols.size(); ++k) narrowed(r, k) = w(r, cols[k]);
  w = std::move(narrowed);
  spec.layers[layer].widths[p] -= 1;

  for (DenseMatrix& next : params.weights[layer + 1]) {
    DenseMatrix shorter(next.rows() - 1, next.cols());
    for (std::size_t c = 0; c < next.cols(); ++c) next(global_into, c) += next(global_drop, c);
    for (std::size_t r = 0, out = 0; r < next.rows(); ++r) {
      if (r == global_drop) continue;
      for (std::size_t c = 0; c < next.cols(); ++c) shorter(out, c) = next(r, c);
      ++out;
    }
    next = std::move(shorter);
  }
}

void merge_duplicates(ModelSpec& spec, ModelParams& params) {
  for (std::size_t i = 0; i + 1 < spec.layers.size(); ++i) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < spec.layers[i].powers.size(); ++p) {
      bool changed = true;
      while (changed) {
        changed = false;
        const DenseMatrix& w = params.weights[i][p];
        for (std::size_t a = 0; a < w.cols() && !changed; ++a) {
          for (std::size_t b = a + 1; b < w.cols() && !changed; ++b) {
            bool same = true;
            for (std::size_t r = 0; r < w.rows() && same; ++r) same = w(r, a) == w(r, b);
            if (same) {
              fold_column(spec, params, i, p, b, offset + b, offset + a);
              changed = true;
            }
          }
        }
      }
      offset += spec.layers[i].widths[p];
    }
  }
}

void write_csv(const std::filesystem::path& path, const ModelSpec& spec,
               const ColumnNormReport& report) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "layer,power,column,norm\n";
  char buf[64];
  for (std::size_t i = 0; i < report.norms.size(); ++i) {
    for (std::size_t p = 0; p < report.norms[i].size(); ++p) {
      const int power = i < spec.layers.size() && p < spec.layers[i].powers.size()
                            ? spec.layers[i].powers[p]
                            : static_cast<int>(p);
      for (std::size_t c = 0; c < report.norms[i][p].size(); ++c) {
        const auto res = std::to_chars(buf, buf + sizeof buf, report.norms[i][p][c]);
        out << i << ',' << power << ',' << c << ',' << std::string_view(buf, res.ptr - buf) << '\n';
      }
    }
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

ShrinkPlan choose_threshold(const ModelSpec& spec, const ColumnNormReport& report,
                            std::size_t budget, bool allow_empty) {
  spec.validate();
  check_report(spec, report);
  std::vector<double> candidates{0.0};
  for (const auto& layer : report.norms)
    for (const auto& matrix : layer) candidates.insert(candidates.end(), matrix.begin(), matrix.end());
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  for (double t : candidates) {
    if (t < 0.0) continue;
    Survivors kept = select(spec, report, t);
    const bool valid = usable(kept);
    if (!valid && !allow_empty) {
      throw ConfigError("budget of " + std::to_string(budget) +
                        " weights cannot hold a model with a non-empty layer and at least " +
                        std::to_string(spec.num_classes) + " output columns");
    }
    if (surviving_weight_count(spec, kept) <= budget) {
      ShrinkPlan plan;
      plan.threshold = t;
      plan.spec = spec_for(spec, kept);
      plan.survivors = std::move(kept);
      return plan;
    }
  }
  throw ConfigError("no threshold fits the budget of " + std::to_string(budget) + " weights");
}

ConstructedModel shrink(const ModelSpec& spec, const ModelParams& params, const ShrinkPlan& plan,
                        const ShrinkOptions& options) {
  params.check_shapes(spec);
  if (spec.shared_first_layer) throw ContractError("cannot shrink a shared first layer");
  if (plan.survivors.size() != spec.layers.size()) {
    throw DimensionError("plan does not match the model's layer count");
  }

  ConstructedModel out{spec_for(spec, plan.survivors), {}};
  if (out.spec.output_width() % spec.num_classes != 0) {
    throw ConfigError("shrunk final width " + std::to_string(out.spec.output_width()) +
                      " is not a multiple of " + std::to_string(spec.num_classes));
  }
  out.params.weights.resize(spec.layers.size());
  std::vector<std::size_t> rows(spec.input_width);
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& layer = spec.layers[i];
    if (plan.survivors[i].size() != layer.powers.size()) {
      throw DimensionError("plan layer " + std::to_string(i) + " has the wrong power count");
    }
    std::vector<std::size_t> next_rows;
    std::size_t offset = 0;
    for (std::size_t p = 0; p < layer.powers.size(); ++p) {
      const DenseMatrix& w = params.weights[i][p];
      const auto& cols = plan.survivors[i][p];
      DenseMatrix kept(rows.size(), cols.size());
      for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t k = 0; k < cols.size(); ++k) {
          if (cols[k] >= w.cols()) throw DimensionError("plan keeps a column the model lacks");
          kept(r, k) = w(rows[r], cols[k]);
        }
      }
      out.params.weights[i].push_back(std::move(kept));
      for (std::size_t c : cols) next_rows.push_back(offset + c);
      offset += layer.widths[p];
    }
    rows = std::move(next_rows);
  }

  if (options.merge_duplicates) merge_duplicates(out.spec, out.params);
  out.params.output_logits = out.spec.output_groups() == spec.output_groups()
                                 ? params.output_logits
                                 : DenseMatrix(1, out.spec.output_groups());
  return out;
}

ModelSpec wide_spec(std::size_t input_width, std::size_t num_classes,
                    const ArchSearchConfig& cfg) {
  if (cfg.depth < 1) throw ConfigError("depth must be at least 1");
  if (cfg.wide_width == 0) throw ConfigError("wide width must be positive");
  std::vector<int> powers = cfg.powers;
  std::sort(powers.begin(), powers.end());
  powers.erase(std::unique(powers.begin(), powers.end()), powers.end());
  ModelSpec spec;
  spec.input_width = input_width;
  spec.num_classes = num_classes;
  for (std::size_t i = 0; i + 1 < cfg.depth; ++i)
    spec.layers.push_back(uniform_layer(powers, cfg.wide_width, Activation::relu));
  const std::size_t last = (cfg.wide_width + num_classes - 1) / num_classes * num_classes;
  spec.layers.push_back(uniform_layer(powers, last, Activation::identity));
  spec.validate();
  return spec;
}

ArchSearchResult learn_architecture(const Dataset& dataset, const ArchSearchConfig& cfg) {
  ArchSearchResult out;
  out.wide = wide_spec(dataset.features().cols(), dataset.num_classes(), cfg);

  TrainConfig lasso = cfg.train;
  lasso.penalty = PenaltyKind::group_lasso;
  lasso.group_lasso_lambda = cfg.group_lasso_lambda;
  out.wide_result = train(out.wide, dataset, lasso);
  out.norms = column_norms(out.wide_result.best_params);
  out.plan = choose_threshold(out.wide, out.norms, cfg.budget);
  out.final_spec = out.plan.spec;

  TrainConfig l2 = cfg.train;
  l2.penalty = PenaltyKind::l2;
  out.final_result = train(out.final_spec, dataset, l2);
  return out;
}

std::size_t count_delta_operators(const ModelSpec& spec, const ModelParams& params) {
  if (!spec.shared_first_layer) {
    throw ContractError("delta counting needs first-layer weights shared across powers");
  }
  if (spec.layers.size() < 2) throw ContractError("delta counting needs a second layer");
  const std::size_t blocks = spec.layers[0].powers.size();
  if (blocks < 2) throw ContractError("delta counting needs at least two first-layer powers");
  params.check_shapes(spec);
  const std::size_t features = spec.layers[0].widths.front();

  std::size_t count = 0;
  for (const DenseMatrix& w : params.weights[1]) {
    std::vector<double> magnitudes(w.rows());
    for (std::size_t c = 0; c < w.cols(); ++c) {
      for (std::size_t r = 0; r < w.rows(); ++r) magnitudes[r] = std::abs(w(r, c));
      const double cut = median(magnitudes);
      for (std::size_t f = 0; f < features; ++f) {
        bool positive = false;
        bool negative = false;
        for (std::size_t b = 0; b < blocks; ++b) {
          const double v = w(b * features + f, c);
          if (std::abs(v) <= cut) continue;
          positive = positive || v > 0.0;
          negative = negative || v < 0.0;
        }
        if (positive && negative) ++count;
      }
    }
  }
  return count;
}

void export_report(const std::filesystem::path& dir, const ModelSpec& spec,
                   const ColumnNormReport& report, const ShrinkPlan* plan) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    layers.push_back({{"layer", i},
                      {"powers", spec.layers[i].powers},
                      {"widths", spec.layers[i].widths},
                      {"weight_rows", spec.layer_input_width(i)}});
  }
  nlohmann::json doc{{"spec", spec_to_json(spec)},
                     {"layers", layers},
                     {"weight_count", spec.weight_count()},
                     {"column_norms", report.to_json()}};
  if (plan != nullptr) doc["plan"] = plan->to_json();
  write_json(dir / "architecture_report.json", doc);
  write_csv(dir / "column_norms.csv", spec, report);
}

ArchitectureReport load_report(const std::filesystem::path& dir) {
  const nlohmann::json doc = read_json(dir / "architecture_report.json");
  if (!doc.contains("spec") || !doc.contains("column_norms")) {
    throw ConfigError("architecture report lacks spec or column_norms");
  }
  return {spec_from_json(doc["spec"]), ColumnNormReport::from_json(doc["column_norms"])};
}

}  // namespace mixhop
