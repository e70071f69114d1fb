#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixhop/dataset.hpp"
#include "mixhop/model.hpp"

namespace mixhop {

enum class PenaltyKind { l2, group_lasso };

std::string_view to_string(PenaltyKind kind) noexcept;

/// How the group-lasso term enters the update. `proximal` applies the exact
/// block soft-threshold after the gradient step, so columns reach zero;
/// `subgradient` adds lambda * w / ||w|| to the gradient (0 at a zero column).
enum class GroupLassoUpdate { proximal, subgradient };

struct TrainConfig {
  double lr_init = 0.05;
  double lr_decay = 0.0005;  // subtracted every `decay_interval` steps
  std::size_t decay_interval = 40;
  std::size_t max_steps = 2000;
  std::size_t patience = 40;
  PenaltyKind penalty = PenaltyKind::l2;
  /// L2 strength on weights (l2 mode) and on the output logits (both modes).
  double l2_lambda = 5e-4;
  double group_lasso_lambda = 0.0;
  GroupLassoUpdate group_lasso_update = GroupLassoUpdate::proximal;
  double dropout_rate = 0.5;
  std::uint64_t seed = 0;
  PropagationOrder order = PropagationOrder::automatic;

  /// Throws ConfigError on bad values, including a schedule that reaches a
  /// non-positive rate before max_steps.
  void validate() const;
  nlohmann::json to_json() const;
};

/// lr_init - lr_decay * floor(step / decay_interval).
double lr_at(std::size_t step, const TrainConfig& cfg);

struct PenaltyValue {
  double value = 0.0;
  ModelParams gradient;  // same shapes as the params
};

/// L2: l2_lambda * sum of squared weight entries. Group lasso:
/// group_lasso_lambda * sum over weight columns of the unsquared column
/// norm. The output logits always get l2_lambda * sum of squares.
PenaltyValue weight_penalty(const ModelParams& params, const TrainConfig& cfg);

struct LossEvaluation {
  double data_loss = 0.0;
  double penalty = 0.0;
  double total = 0.0;
  ModelParams gradient;
};

/// Masked cross-entropy over the training split plus the weight penalty, and
/// the gradient of the sum. Throws ConfigError on an empty training split.
LossEvaluation total_loss(const ModelSpec& spec, const ModelParams& params, const Dataset& dataset,
                          const TrainConfig& cfg, Rng& dropout_rng, bool training);

/// Fraction of `nodes` whose argmax row matches the label; ties go to the
/// lowest class id. Throws UndefinedStatistic on an empty set.
double accuracy(const DenseMatrix& predictions, const Labels& labels,
                std::span<const NodeId> nodes);

struct StepLog {
  std::size_t step = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double valid_accuracy = 0.0;
};

struct TrainResult {
  std::uint64_t seed = 0;
  std::vector<StepLog> log;
  std::size_t best_step = 0;
  double best_valid_accuracy = 0.0;
  double test_accuracy = 0.0;  // measured at best_step
  std::size_t steps_run = 0;
  ModelParams best_params;
  ColumnNorms best_column_norms;

  nlohmann::json summary_json() const;
};

/// Full-batch gradient descent with validation-based early stopping.
///
/// Each step evaluates validation accuracy with the current parameters (eval
/// mode), then takes one descent step on the training loss. Patience counts
/// steps since the last strict improvement. Throws DivergenceError on a
/// non-finite loss.
TrainResult train(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg);
/// Same, starting from given parameters instead of a fresh initialisation.
TrainResult train_from(const ModelSpec& spec, ModelParams params, const Dataset& dataset,
                       const TrainConfig& cfg);

struct RunOutcome {
  std::uint64_t seed = 0;
  std::size_t best_step = 0;
  double valid_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct MultiSeedSummary {
  std::vector<RunOutcome> runs;  // sorted: valid accuracy desc, then seed asc
  std::size_t kept = 0;
  double mean_test_accuracy = 0.0;
  double stddev_test_accuracy = 0.0;  // population standard deviation

  nlohmann::json to_json() const;
};

/// Reduces run outcomes to the top-`keep_fraction` summary. Independent of
/// the input order.
MultiSeedSummary summarize_runs(std::vector<RunOutcome> runs, double keep_fraction);

struct MultiSeedOptions {
  std::size_t runs = 100;
  double keep_fraction = 0.5;
  std::size_t workers = 1;
};

/// Trains with seeds cfg.seed + 0 .. cfg.seed + runs - 1 and keeps the
/// ceil(keep_fraction * runs) best by validation accuracy. When `results` is
/// given it receives every TrainResult in seed order.
MultiSeedSummary multi_seed(const ModelSpec& spec, const Dataset& dataset, const TrainConfig& cfg,
                            const MultiSeedOptions& options,
                            std::vector<TrainResult>* results = nullptr);

}  // namespace mixhop
