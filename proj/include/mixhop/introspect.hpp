#pragma once

// Architecture learning by column pruning, and delta-operator counting.

#include <cstddef>
#include <filesystem>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixhop/dataset.hpp"
#include "mixhop/model.hpp"
#include "mixhop/train.hpp"

namespace mixhop {

/// Column norms of every weight matrix, [layer][power index][column].
struct ColumnNormReport {
  ColumnNorms norms;

  nlohmann::json to_json() const;
  static ColumnNormReport from_json(const nlohmann::json& doc);
  friend bool operator==(const ColumnNormReport&, const ColumnNormReport&) = default;
};

/// Output logits are excluded.
ColumnNormReport column_norms(const ModelParams& params);

struct ShrinkPlan {
  /// Columns with norm strictly above this survive.
  double threshold = 0.0;
  /// Surviving column indices, [layer][power index], ascending.
  std::vector<std::vector<std::vector<std::size_t>>> survivors;
  /// Spec after shrinking. When everything is removed (allowed only with
  /// `allow_empty`) it has zero widths and does not validate.
  ModelSpec spec;

  nlohmann::json to_json() const;
};

/// Weight count of `spec` with only the given survivors kept.
std::size_t surviving_weight_count(const ModelSpec& spec,
                                   const std::vector<std::vector<std::vector<std::size_t>>>& kept);

/// Smallest threshold from {0} and the observed norms whose survivors fit in
/// `budget` weights. Final-layer survivors are rounded down to a multiple of
/// the class count by dropping the lowest norms. Throws ConfigError when no
/// valid model fits, unless `allow_empty` lets every column go. Throws
/// ContractError for a shared first layer.
ShrinkPlan choose_threshold(const ModelSpec& spec, const ColumnNormReport& report,
                            std::size_t budget, bool allow_empty = false);

struct ShrinkOptions {
  /// Fold bit-identical surviving columns of a hidden matrix into the first
  /// copy, adding their downstream rows together.
  bool merge_duplicates = false;
};

/// Drops the columns the plan removes and the matching rows of the next
/// layer. Surviving values are copied bit-exactly. Output logits are kept
/// when the number of output groups is unchanged, zeroed otherwise.
ConstructedModel shrink(const ModelSpec& spec, const ModelParams& params, const ShrinkPlan& plan,
                        const ShrinkOptions& options = {});

struct ArchSearchConfig {
  std::vector<int> powers{0, 1, 2};
  std::size_t wide_width = 200;  // per power, every layer
  std::size_t depth = 2;
  /// Weight budget of the final model.
  std::size_t budget = 0;
  double group_lasso_lambda = 0.01;
  /// Schedule, seed and dropout for both trainings; its penalty fields are
  /// overridden per stage.
  TrainConfig train;
};

/// Spec of the wide starting model. The final layer width per power is
/// rounded up to a multiple of the class count.
ModelSpec wide_spec(std::size_t input_width, std::size_t num_classes, const ArchSearchConfig& cfg);

struct ArchSearchResult {
  ModelSpec wide;
  TrainResult wide_result;
  ColumnNormReport norms;  // at peak validation of the wide run
  ShrinkPlan plan;
  ModelSpec final_spec;
  TrainResult final_result;  // retrained from scratch with L2
};

/// Wide model -> group-lasso training -> norms at peak validation ->
/// threshold for the budget -> shrink -> fresh L2 training.
ArchSearchResult learn_architecture(const Dataset& dataset, const ArchSearchConfig& cfg);

/// Opposite-sign uses of shared first-layer features in the second layer.
///
/// Entries of each second-layer matrix are kept only when their magnitude is
/// strictly above the median magnitude of their column. For every matrix,
/// column and first-layer feature f, the rows of f in each first-layer power
/// block are inspected; the occurrence counts when the kept entries include
/// both a positive and a negative value. Throws ContractError without a
/// shared first layer or with fewer than two first-layer powers.
std::size_t count_delta_operators(const ModelSpec& spec, const ModelParams& params);

/// architecture_report.json (spec, widths per layer and power, norms, plan)
/// and column_norms.csv (layer, power, column, norm).
void export_report(const std::filesystem::path& dir, const ModelSpec& spec,
                   const ColumnNormReport& report, const ShrinkPlan* plan = nullptr);

struct ArchitectureReport {
  ModelSpec spec;
  ColumnNormReport norms;
  friend bool operator==(const ArchitectureReport&, const ArchitectureReport&) = default;
};
ArchitectureReport load_report(const std::filesystem::path& dir);

}  // namespace mixhop
